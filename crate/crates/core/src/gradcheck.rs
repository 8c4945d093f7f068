//! Central finite-difference comparison against tape gradients.

use std::fmt::Write as _;

use rayon::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{word_occurrences, ProposalInput, WordGrid, BOS, EOS, PAD};
use crate::error::Result;
use crate::model::{SummarizerConfig, SummarizerParams};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::{teacher_forced_loss, Example};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Multiplies the backprop gradient before comparison. Anything other
    /// than 1.0 is a negative control that should make the check fail.
    pub grad_scale: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tol: 1e-6,
            grad_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// Largest absolute disagreement over the tensor's gradient scale.
    pub max_rel_error: f64,
    /// Largest per-element relative error; dominated by finite-difference
    /// roundoff wherever an element's gradient is tiny.
    pub max_elementwise_error: f64,
    pub worst_index: usize,
    pub backprop: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            let _ = writeln!(
                out,
                "{:<4} {:<40} max_rel_err={:.3e} elementwise={:.3e} at [{}] (bp={:.6e}, fd={:.6e})",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.max_rel_error,
                p.max_elementwise_error,
                p.worst_index,
                p.backprop,
                p.numeric
            );
        }
        let _ = writeln!(
            out,
            "{} parameters, tolerance {:.1e}: {}",
            self.params.len(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        out
    }
}

pub fn relative_error(backprop: f64, numeric: f64) -> f64 {
    (backprop - numeric).abs() / backprop.abs().max(numeric.abs()).max(1e-8)
}

/// `max_i |bp_i - fd_i| / max(max_i |bp_i|, max_i |fd_i|, 1e-8)`.
pub fn tensor_relative_error(backprop: &[f64], numeric: &[f64]) -> f64 {
    let scale = backprop
        .iter()
        .chain(numeric)
        .fold(1e-8f64, |m, v| m.max(v.abs()));
    let diff = backprop
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (b, n)| if (b - n).is_nan() { f64::NAN } else { m.max((b - n).abs()) });
    diff / scale
}

/// Checks every element of every input of the scalar function `f`. A
/// tensor passes when its scale-normalized error is within `opts.tol`.
pub fn gradcheck<F>(f: F, inputs: &[(String, Tensor)], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("parameter leaf has a gradient"))
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let params = inputs
        .par_iter()
        .enumerate()
        .map(|(which, (name, tensor))| -> Result<ParamCheck> {
            let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
            let mut worst = ParamCheck {
                name: name.clone(),
                max_rel_error: 0.0,
                max_elementwise_error: 0.0,
                worst_index: 0,
                backprop: 0.0,
                numeric: 0.0,
                passed: true,
            };
            let mut bps = Vec::with_capacity(tensor.len());
            let mut fds = Vec::with_capacity(tensor.len());
            for idx in 0..tensor.len() {
                let orig = tensor.data()[idx];
                values[which].data_mut()[idx] = orig + opts.step;
                let plus = eval(&values)?;
                values[which].data_mut()[idx] = orig - opts.step;
                let minus = eval(&values)?;
                values[which].data_mut()[idx] = orig;
                let numeric = (plus - minus) / (2.0 * opts.step);
                let backprop = analytic[which].data()[idx] * opts.grad_scale;
                let err = relative_error(backprop, numeric);
                if err > worst.max_elementwise_error || err.is_nan() {
                    worst.max_elementwise_error = err;
                }
                let abs = (backprop - numeric).abs();
                if idx == 0 || abs > (worst.backprop - worst.numeric).abs() || abs.is_nan() {
                    worst.worst_index = idx;
                    worst.backprop = backprop;
                    worst.numeric = numeric;
                }
                bps.push(backprop);
                fds.push(numeric);
            }
            worst.max_rel_error = tensor_relative_error(&bps, &fds);
            worst.passed = worst.max_rel_error <= opts.tol;
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport { tol: opts.tol, params })
}

/// Random proposal for `cfg`: uniform features, sentences of random length
/// (some empty) and a target of `target_len` words.
pub fn random_example(cfg: &SummarizerConfig, target_len: usize, seed: u64) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = Tensor::matrix(
        cfg.n_segments,
        cfg.feature_dim,
        (0..cfg.n_segments * cfg.feature_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
    .expect("sized to the config");
    let first_word = crate::data::RESERVED.len();
    let mut ids = Vec::with_capacity(cfg.encoder_len());
    let mut mask = Vec::with_capacity(cfg.encoder_len());
    for _ in 0..cfg.n_segments {
        let len = rng.gen_range(0..=cfg.n_words);
        for k in 0..cfg.n_words {
            let real = k < len;
            ids.push(if real { rng.gen_range(first_word..cfg.vocab_size) } else { PAD });
            mask.push(real);
        }
    }
    let mut target = vec![BOS];
    target.extend((0..target_len).map(|_| rng.gen_range(first_word..cfg.vocab_size)));
    target.push(EOS);
    let occurrences = word_occurrences(&target, cfg.vocab_size);
    let words = target[1..target.len() - 1].to_vec();
    Example {
        input: ProposalInput {
            features,
            words: WordGrid {
                ids,
                mask,
                width: cfg.n_words,
            },
        },
        target,
        occurrences,
        references: Vec::new(),
        reference_ids: vec![words],
    }
}

/// Finite-difference check of the combined loss over every model
/// parameter, with dropout off. `spread` adds uniform noise of that
/// half-width to the fresh initialization first.
pub fn check_model(
    cfg: &SummarizerConfig,
    seed: u64,
    lambda_d: f64,
    spread: f64,
    opts: GradcheckOptions,
) -> Result<GradcheckReport> {
    let mut params = SummarizerParams::init(cfg, seed)?;
    if spread > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        params.for_each_mut(&mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-spread..spread));
        });
    }
    let example = random_example(cfg, 4, seed.wrapping_add(1));
    let named: Vec<(String, Tensor)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let cfg = cfg.clone();
    gradcheck(
        move |tape, vars| {
            let bound = params.with_values(vars);
            let (loss, _) = teacher_forced_loss(tape, &cfg, &bound, &example, lambda_d, &mut None)?;
            Ok(loss)
        },
        &named,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(ts: Vec<Tensor>) -> Vec<(String, Tensor)> {
        ts.into_iter().enumerate().map(|(i, t)| (format!("x{i}"), t)).collect()
    }

    #[test]
    fn dot_product_passes() {
        let inputs = named(vec![
            Tensor::vector(vec![0.3, -1.2, 2.0]),
            Tensor::vector(vec![1.1, 0.4, -0.7]),
        ]);
        let report = gradcheck(
            |t, v| {
                let p = t.mul(v[0], v[1])?;
                Ok(t.sum(p))
            },
            &inputs,
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn corrupted_gradient_fails() {
        let inputs = named(vec![Tensor::vector(vec![0.3, -1.2, 2.0])]);
        let report = gradcheck(
            |t, v| {
                let p = t.mul(v[0], v[0])?;
                Ok(t.sum(p))
            },
            &inputs,
            GradcheckOptions {
                grad_scale: 2.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }
}
