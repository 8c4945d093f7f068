//! Sentence generation and the division-output selection baselines.

use crate::data::{ProposalInput, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{DecoderContext, DecoderState, Summarizer, SummarizerConfig, SummarizerParams};
use crate::tensor::{log_softmax_values, Tape, Tensor, Var};

/// Anything that turns a previous token into next-token log-probabilities.
pub trait StepModel {
    type State: Clone;

    fn initial(&mut self) -> Result<Self::State>;

    /// Consumes `prev` and returns the new state with log-probabilities of
    /// the next token.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Cap on generated tokens, EOS included.
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
}

impl BeamConfig {
    pub fn new(width: usize, max_len: usize) -> Self {
        BeamConfig {
            width,
            max_len,
            bos: BOS,
            eos: EOS,
        }
    }

    pub fn greedy(max_len: usize) -> Self {
        BeamConfig::new(1, max_len)
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Starts with BOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Log-probability of each generated token.
    pub token_log_probs: Vec<f64>,
    pub state: S,
    pub finished: bool,
    next: Vec<f64>,
}

impl<S> Hypothesis<S> {
    /// Generated tokens without BOS or the closing EOS.
    pub fn words(&self) -> &[usize] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&t) if self.finished && t == EOS => &body[..body.len() - 1],
            _ => body,
        }
    }

    pub fn generated_len(&self) -> usize {
        self.tokens.len() - 1
    }
}

/// Length-capped beam search. Finished hypotheses stay in the beam and
/// compete on total log-probability. Ties go to the earlier beam, then the
/// lower token id, so width 1 is greedy argmax.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: BeamConfig) -> Result<Vec<Hypothesis<M::State>>> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(Error::Config(format!(
            "beam width {} and max length {} must be positive",
            cfg.width, cfg.max_len
        )));
    }
    let init = model.initial()?;
    let (state, next) = model.step(&init, cfg.bos)?;
    let mut beams = vec![Hypothesis {
        tokens: vec![cfg.bos],
        log_prob: 0.0,
        token_log_probs: Vec::new(),
        state,
        finished: false,
        next,
    }];

    while beams.iter().any(|b| !b.finished) {
        // (score, parent, token); token None keeps a finished beam as is.
        let mut candidates: Vec<(f64, usize, Option<usize>)> = Vec::new();
        for (i, b) in beams.iter().enumerate() {
            if b.finished {
                candidates.push((b.log_prob, i, None));
                continue;
            }
            let mut order: Vec<usize> = (0..b.next.len()).collect();
            order.sort_by(|&x, &y| b.next[y].total_cmp(&b.next[x]).then(x.cmp(&y)));
            for &t in order.iter().take(cfg.width) {
                candidates.push((b.log_prob + b.next[t], i, Some(t)));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.map_or(0, |t| t + 1).cmp(&b.2.map_or(0, |t| t + 1)))
        });
        candidates.truncate(cfg.width);

        let mut next_beams = Vec::with_capacity(candidates.len());
        for (score, parent, token) in candidates {
            let p = &beams[parent];
            let Some(t) = token else {
                next_beams.push(p.clone());
                continue;
            };
            let mut tokens = p.tokens.clone();
            tokens.push(t);
            let mut token_log_probs = p.token_log_probs.clone();
            token_log_probs.push(p.next[t]);
            let finished = t == cfg.eos || tokens.len() - 1 >= cfg.max_len;
            let (state, next) = if finished {
                (p.state.clone(), Vec::new())
            } else {
                model.step(&p.state, t)?
            };
            next_beams.push(Hypothesis {
                tokens,
                log_prob: score,
                token_log_probs,
                state,
                finished,
                next,
            });
        }
        beams = next_beams;
    }
    beams.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    Ok(beams)
}

/// Summarizer (or segment captioner) decoding on a frozen tape.
pub struct SummarizerStepper<'a> {
    cfg: &'a SummarizerConfig,
    tape: Tape,
    params: SummarizerParams<Var>,
    context: DecoderContext,
}

impl<'a> SummarizerStepper<'a> {
    pub fn new(cfg: &'a SummarizerConfig, params: &SummarizerParams<Tensor>, input: &ProposalInput) -> Result<Self> {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let context = Summarizer::new(cfg, &bound).prepare(&mut tape, input, &mut None, &mut Vec::new())?;
        Ok(SummarizerStepper {
            cfg,
            tape,
            params: bound,
            context,
        })
    }
}

impl StepModel for SummarizerStepper<'_> {
    type State = DecoderState;

    fn initial(&mut self) -> Result<DecoderState> {
        Ok(Summarizer::new(self.cfg, &self.params).initial_state(&mut self.tape))
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let net = Summarizer::new(self.cfg, &self.params);
        let (next, logits) = net.decoder_step(&mut self.tape, &self.context, prev, *state, &mut None, &mut Vec::new())?;
        let lp = log_softmax_values(self.tape.value(logits).data());
        if lp.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("decoder log-probabilities".into()));
        }
        Ok((next, lp))
    }
}

/// Best sentence for one proposal with its per-token log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Word ids without BOS/EOS.
    pub words: Vec<usize>,
    /// One entry per generated token, EOS included when emitted.
    pub token_log_probs: Vec<f64>,
    pub log_prob: f64,
}

pub fn generate(
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Tensor>,
    input: &ProposalInput,
    beam: BeamConfig,
) -> Result<Generated> {
    let mut stepper = SummarizerStepper::new(cfg, params, input)?;
    let best = beam_search(&mut stepper, beam)?
        .into_iter()
        .next()
        .expect("beam search keeps at least one hypothesis");
    Ok(Generated {
        words: best.words().to_vec(),
        token_log_probs: best.token_log_probs,
        log_prob: best.log_prob,
    })
}

/// Log-probability the model assigns to each word of `words` (teacher
/// forced, BOS/EOS excluded).
pub fn score_sentence(
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Tensor>,
    input: &ProposalInput,
    words: &[usize],
) -> Result<Vec<f64>> {
    let mut stepper = SummarizerStepper::new(cfg, params, input)?;
    let mut state = stepper.initial()?;
    let mut prev = BOS;
    let mut out = Vec::with_capacity(words.len());
    for &w in words {
        let (next, lp) = stepper.step(&state, prev)?;
        let v = *lp.get(w).ok_or(Error::IndexOutOfRange {
            what: "word id",
            index: w,
            len: lp.len(),
        })?;
        out.push(v);
        state = next;
        prev = w;
    }
    Ok(out)
}

/// `(1/M) Σ log p(w_i)`.
pub fn confidence(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::EmptyInput("sentence"));
    }
    Ok(log_probs.iter().sum::<f64>() / log_probs.len() as f64)
}

/// Index of the sentence with the highest mean log-probability, given the
/// per-word log-probabilities; the lowest index wins ties.
pub fn dm_best_select_log(sentences: &[Vec<f64>]) -> Result<usize> {
    if sentences.is_empty() {
        return Err(Error::EmptyInput("sentence list"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in sentences.iter().enumerate() {
        let c = confidence(s)?;
        if c > best.1 || (i == 0 && c.is_nan()) {
            best = (i, c);
        }
    }
    Ok(best.0)
}

/// Same selection from per-word probabilities.
pub fn dm_best_select(probabilities: &[Vec<f64>]) -> Result<usize> {
    let logs: Vec<Vec<f64>> = probabilities
        .iter()
        .map(|s| s.iter().map(|p| p.ln()).collect())
        .collect();
    dm_best_select_log(&logs)
}

/// Mean of `metric(sentence, references)` over the division sentences.
pub fn dm_ave_score<S, F>(sentences: &[Vec<S>], references: &[Vec<S>], metric: F) -> Result<f64>
where
    F: Fn(&[S], &[Vec<S>]) -> f64,
{
    if sentences.is_empty() {
        return Err(Error::EmptyInput("sentence list"));
    }
    let total: f64 = sentences.iter().map(|s| metric(s, references)).sum();
    Ok(total / sentences.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed log-prob tables indexed by generated length.
    struct Table(Vec<Vec<f64>>);

    impl StepModel for Table {
        type State = usize;
        fn initial(&mut self) -> Result<usize> {
            Ok(0)
        }
        fn step(&mut self, state: &usize, _prev: usize) -> Result<(usize, Vec<f64>)> {
            Ok((state + 1, self.0[(*state).min(self.0.len() - 1)].clone()))
        }
    }

    #[test]
    fn dominant_word_until_cap() {
        let mut row = vec![-50.0; 6];
        row[4] = 0.0;
        let mut m = Table(vec![row]);
        let out = beam_search(&mut m, BeamConfig::new(3, 7)).unwrap();
        assert_eq!(out[0].words(), &[4; 7]);
        assert!(out[0].finished);
    }

    #[test]
    fn eos_stops_generation() {
        let mut m = Table(vec![vec![-9.0, -9.0, -0.1, -9.0, -1.0]]);
        let out = beam_search(&mut m, BeamConfig::greedy(10)).unwrap();
        assert_eq!(out[0].tokens, vec![BOS, EOS]);
        assert!(out[0].words().is_empty());
    }

    #[test]
    fn dm_best_examples() {
        assert_eq!(dm_best_select(&[vec![0.3, 0.2]]).unwrap(), 0);
        let u = 1.0 / 20.0;
        assert_eq!(dm_best_select(&[vec![u; 3], vec![u; 7], vec![u]]).unwrap(), 0);
        assert_eq!(dm_best_select(&[vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap(), 0);
        assert!(dm_best_select(&[]).is_err());
        assert!(dm_best_select(&[vec![]]).is_err());
    }

    #[test]
    fn dm_ave_examples() {
        let r = vec![vec!["a", "b"]];
        let bleu1 = |c: &[&str], refs: &[Vec<&str>]| {
            das_metrics::sentence_bleu(c, refs, 1, das_metrics::Smoothing::None)
        };
        assert_eq!(dm_ave_score(&[vec!["a", "b"], vec!["a", "b"]], &r, bleu1).unwrap(), 1.0);
        assert_eq!(dm_ave_score(&[vec!["a", "b"], vec!["c", "d"]], &r, bleu1).unwrap(), 0.5);
        assert!(dm_ave_score::<&str, _>(&[], &r, |_, _| 0.0).is_err());
    }
}
