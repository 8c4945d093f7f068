//! Losses, Adam with step decay, cross-entropy training and self-critical
//! fine-tuning.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use das_metrics::{meteor_lite, sentence_bleu, CiderD, Smoothing};

use crate::data::{encode_target, normalize_tokens, word_occurrences, ProposalInput, ProposalRecord, Vocabulary, BOS, EOS};
use crate::decode::{generate, BeamConfig};
use crate::error::{Error, Result};
use crate::model::{Dropout, Summarizer, SummarizerConfig, SummarizerParams};
use crate::tensor::{softmax_values, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Xent,
    Scst,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xent" => Ok(TrainMode::Xent),
            "scst" => Ok(TrainMode::Scst),
            _ => Err(Error::Config(format!("unknown training mode {s:?} (expected xent or scst)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Sentence BLEU-4 with add-one smoothing.
    Bleu4,
    MeteorLite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// The rate is divided by this every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub lambda_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    /// Token cap for targets and decoding (EOS included).
    pub max_len: usize,
    pub reward: RewardKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            lr_decay: 1.25,
            decay_every: 3,
            batch_size: 32,
            lambda_d: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            seed: 0,
            mode: TrainMode::Xent,
            clip_norm: 5.0,
            max_len: 30,
            reward: RewardKind::Bleu4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lambda_d >= 0.0) {
            return Err(Error::Config(format!("lambda_d {} must be non-negative", self.lambda_d)));
        }
        if !(self.lr_decay >= 1.0) {
            return Err(Error::Config(format!("lr_decay {} must be at least 1", self.lr_decay)));
        }
        if self.batch_size == 0 || self.decay_every == 0 || self.max_len < 2 {
            return Err(Error::Config(
                "batch_size and decay_every must be positive and max_len at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        Ok(())
    }
}

/// `lr₀ / decay^⌊epoch / every⌋`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr / cfg.lr_decay.powi((epoch / cfg.decay_every) as i32)
}

/// Mean over unmasked steps of `-log softmax(logits_t)[target_t]`.
pub fn sequence_ce_loss(tape: &mut Tape, logits: &[Var], targets: &[usize], mask: &[bool]) -> Result<Var> {
    if logits.len() != targets.len() || mask.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "sequence_ce_loss",
            left: vec![logits.len()],
            right: vec![targets.len(), mask.len()],
        });
    }
    let mut terms = Vec::with_capacity(logits.len());
    for ((&l, &t), &m) in logits.iter().zip(targets).zip(mask) {
        if m {
            terms.push(tape.cross_entropy(l, t)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::AllMasked("target sequence"));
    }
    let n = terms.len() as f64;
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, 1.0 / n))
}

/// Mean binary cross-entropy of the word-occurrence head.
pub fn discriminative_loss(tape: &mut Tape, bow_logits: Var, occurrences: &[f64]) -> Result<Var> {
    tape.bce_with_logits(bow_logits, occurrences)
}

pub fn combined_loss(tape: &mut Tape, ce: Var, ld: Var, lambda_d: f64) -> Result<Var> {
    let weighted = tape.scale(ld, lambda_d);
    tape.add(ce, weighted)
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[&[usize]], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_params(params: &SummarizerParams<Tensor>, cfg: &TrainConfig) -> Self {
        let named = params.named();
        let shapes: Vec<&[usize]> = named.iter().map(|(_, t)| t.shape()).collect();
        Adam::new(&shapes, cfg.beta1, cfg.beta2, cfg.eps)
    }

    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                left: vec![params.len(), grads.len()],
                right: vec![self.m.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place when their global L2 norm exceeds `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// One training pair: model input, `[BOS] … [EOS]` target and references.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: ProposalInput,
    pub target: Vec<usize>,
    pub occurrences: Vec<f64>,
    pub references: Vec<Vec<String>>,
    pub reference_ids: Vec<Vec<usize>>,
}

impl Example {
    /// The first reference is the training target.
    pub fn from_record(
        record: &ProposalRecord,
        vocab: &Vocabulary,
        model: &SummarizerConfig,
        max_len: usize,
    ) -> Result<Self> {
        let references = record.reference_tokens();
        let first = references.first().ok_or(Error::EmptyInput("references"))?;
        let target = encode_target(first, vocab, max_len);
        let occurrences = word_occurrences(&target, vocab.len());
        let reference_ids = references.iter().map(|r| vocab.encode_sentence(r)).collect();
        Ok(Example {
            input: ProposalInput::from_record(record, vocab, model.n_segments, model.n_words)?,
            target,
            occurrences,
            references,
            reference_ids,
        })
    }
}

pub fn build_examples(
    records: &[ProposalRecord],
    vocab: &Vocabulary,
    model: &SummarizerConfig,
    max_len: usize,
) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| Example::from_record(r, vocab, model, max_len))
        .collect()
}

/// Vocabulary over training references and segment sentences.
pub fn vocabulary_from_records(records: &[ProposalRecord], min_count: usize) -> Vocabulary {
    let sentences: Vec<Vec<String>> = records
        .iter()
        .flat_map(|r| {
            r.references
                .iter()
                .map(|s| normalize_tokens(s))
                .chain(r.segments.iter().map(|s| normalize_tokens(&s.sentence)))
                .collect::<Vec<_>>()
        })
        .collect();
    Vocabulary::build(sentences.iter().map(|s| s.as_slice()), min_count)
}

/// Stable 64-bit mix of a few integers, used to derive per-example seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(z << 6).wrapping_add(z >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub ld: f64,
}

/// Builds the combined teacher-forced loss on `tape`.
pub fn teacher_forced_loss(
    tape: &mut Tape,
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Var>,
    example: &Example,
    lambda_d: f64,
    dropout: &mut Option<Dropout>,
) -> Result<(Var, LossParts)> {
    let net = Summarizer::new(cfg, params);
    let out = net.forward_teacher_forced(tape, &example.input, &example.target, dropout)?;
    let targets = &example.target[1..];
    let ce = sequence_ce_loss(tape, &out.logits, targets, &vec![true; targets.len()])?;
    let ce_value = tape.value(ce).item();
    match out.bow_logits {
        Some(bow) => {
            let ld = discriminative_loss(tape, bow, &example.occurrences)?;
            let ld_value = tape.value(ld).item();
            let total = combined_loss(tape, ce, ld, lambda_d)?;
            Ok((
                total,
                LossParts {
                    total: tape.value(total).item(),
                    ce: ce_value,
                    ld: ld_value,
                },
            ))
        }
        None => Ok((
            ce,
            LossParts {
                total: ce_value,
                ce: ce_value,
                ld: 0.0,
            },
        )),
    }
}

fn collect_grads(tape: &mut Tape, bound: &SummarizerParams<Var>) -> Vec<Tensor> {
    bound
        .named()
        .into_iter()
        .map(|(_, &v)| tape.take_grad(v).expect("backward ran"))
        .collect()
}

/// Gradients of the combined loss for one example. `dropout_seed` of `None`
/// runs in evaluation mode.
pub fn example_gradients(
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Tensor>,
    example: &Example,
    lambda_d: f64,
    dropout_seed: Option<u64>,
) -> Result<(Vec<Tensor>, LossParts)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut dropout = dropout_seed.map(|s| Dropout::new(cfg.keep_prob, s));
    let (loss, parts) = teacher_forced_loss(&mut tape, cfg, &bound, example, lambda_d, &mut dropout)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss {}", parts.total)));
    }
    tape.backward(loss)?;
    Ok((collect_grads(&mut tape, &bound), parts))
}

fn mean_grads(mut per_example: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let n = per_example.len() as f64;
    let mut acc = per_example.remove(0);
    for g in per_example {
        for (a, b) in acc.iter_mut().zip(&g) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    for a in acc.iter_mut() {
        a.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    acc
}

fn apply_update(
    params: &mut SummarizerParams<Tensor>,
    adam: &mut Adam,
    mut grads: Vec<Tensor>,
    lr: f64,
    clip: f64,
) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    clip_global_norm(&mut grads, clip);
    let mut slots = params.tensors_mut();
    adam.update(&mut slots, &grads, lr)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(())
}

/// One Adam step on the mean loss of `batch`. Examples run in parallel;
/// their gradients are merged in batch order.
pub fn train_step(
    cfg: &SummarizerConfig,
    params: &mut SummarizerParams<Tensor>,
    adam: &mut Adam,
    batch: &[&Example],
    train: &TrainConfig,
    lr: f64,
    dropout_seeds: Option<&[u64]>,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let frozen: &SummarizerParams<Tensor> = params;
    let results = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| example_gradients(cfg, frozen, ex, train.lambda_d, dropout_seeds.map(|s| s[i])))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let mut parts = LossParts {
        total: 0.0,
        ce: 0.0,
        ld: 0.0,
    };
    let mut grads = Vec::with_capacity(results.len());
    for (g, p) in results {
        parts.total += p.total / n;
        parts.ce += p.ce / n;
        parts.ld += p.ld / n;
        grads.push(g);
    }
    apply_update(params, adam, mean_grads(grads), lr, train.clip_norm)?;
    Ok(parts)
}

/// Reward on word ids against reference id lists.
pub type RewardFn<'a> = dyn Fn(&[usize], &[Vec<usize>]) -> f64 + Sync + 'a;

pub fn bleu4_reward(words: &[usize], references: &[Vec<usize>]) -> f64 {
    sentence_bleu(words, references, 4, Smoothing::AddOne)
}

/// METEOR-lite on decoded words.
pub fn meteor_reward(vocab: &Vocabulary) -> impl Fn(&[usize], &[Vec<usize>]) -> f64 + Sync + '_ {
    move |words, references| {
        let cand = vocab.decode_sentence(words);
        let refs: Vec<Vec<String>> = references.iter().map(|r| vocab.decode_sentence(r)).collect();
        meteor_lite(&cand, &refs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScstOutcome {
    pub grads: Vec<Tensor>,
    pub sample: Vec<usize>,
    pub greedy: Vec<usize>,
    pub sample_reward: f64,
    pub greedy_reward: f64,
    /// Sum of `-log p` over the sampled tokens.
    pub sample_nll: f64,
    pub skipped: bool,
}

impl ScstOutcome {
    pub fn advantage(&self) -> f64 {
        self.sample_reward - self.greedy_reward
    }
}

struct Sampled {
    tape: Tape,
    bound: SummarizerParams<Var>,
    words: Vec<usize>,
    nll: Var,
}

fn sample_on_tape<R: Rng>(
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Tensor>,
    input: &ProposalInput,
    max_len: usize,
    rng: &mut R,
) -> Result<Sampled> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let net = Summarizer::new(cfg, &bound);
    let ctx = net.prepare(&mut tape, input, &mut None, &mut Vec::new())?;
    let mut state = net.initial_state(&mut tape);
    let mut prev = BOS;
    let mut words = Vec::new();
    let mut terms = Vec::new();
    for _ in 0..max_len {
        let (next, logits) = net.decoder_step(&mut tape, &ctx, prev, state, &mut None, &mut Vec::new())?;
        let probs = softmax_values(tape.value(logits).data(), None)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut token = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                token = i;
                break;
            }
        }
        terms.push(tape.cross_entropy(logits, token)?);
        if token == EOS {
            break;
        }
        words.push(token);
        state = next;
        prev = token;
    }
    let nll = tape.add_n(&terms)?;
    Ok(Sampled {
        tape,
        bound,
        words,
        nll,
    })
}

/// Self-critical policy gradient for one example: one ancestral sample
/// against the greedy decode as baseline, in evaluation mode.
pub fn scst_gradient<R: Rng>(
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Tensor>,
    example: &Example,
    reward: &RewardFn,
    max_len: usize,
    rng: &mut R,
) -> Result<ScstOutcome> {
    let greedy = generate(cfg, params, &example.input, BeamConfig::greedy(max_len))?.words;
    let greedy_reward = reward(&greedy, &example.reference_ids);

    let mut sampled = sample_on_tape(cfg, params, &example.input, max_len, rng)?;
    if sampled.words.is_empty() {
        sampled = sample_on_tape(cfg, params, &example.input, max_len, rng)?;
    }
    if sampled.words.is_empty() {
        warn!("two empty samples in a row; skipping example");
        let named = params.named();
        return Ok(ScstOutcome {
            grads: named.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            sample: Vec::new(),
            greedy,
            sample_reward: 0.0,
            greedy_reward,
            sample_nll: 0.0,
            skipped: true,
        });
    }
    let sample_reward = reward(&sampled.words, &example.reference_ids);
    let advantage = sample_reward - greedy_reward;
    let Sampled {
        mut tape,
        bound,
        words,
        nll,
    } = sampled;
    let sample_nll = tape.value(nll).item();
    // -(advantage) Σ log p = advantage · Σ (-log p)
    let loss = tape.scale(nll, advantage);
    tape.backward(loss)?;
    Ok(ScstOutcome {
        grads: collect_grads(&mut tape, &bound),
        sample: words,
        greedy,
        sample_reward,
        greedy_reward,
        sample_nll,
        skipped: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScstStepStats {
    pub sample_reward: f64,
    pub greedy_reward: f64,
    /// Mean per-token negative log-likelihood of the samples.
    pub sample_nll: f64,
    pub skipped: usize,
}

pub fn scst_step(
    cfg: &SummarizerConfig,
    params: &mut SummarizerParams<Tensor>,
    adam: &mut Adam,
    batch: &[&Example],
    train: &TrainConfig,
    lr: f64,
    reward: &RewardFn,
    seeds: &[u64],
) -> Result<ScstStepStats> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let frozen: &SummarizerParams<Tensor> = params;
    let outcomes = batch
        .par_iter()
        .zip(seeds)
        .map(|(ex, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scst_gradient(cfg, frozen, ex, reward, train.max_len, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let mut stats = ScstStepStats {
        sample_reward: 0.0,
        greedy_reward: 0.0,
        sample_nll: 0.0,
        skipped: 0,
    };
    let mut grads = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        stats.sample_reward += o.sample_reward / n;
        stats.greedy_reward += o.greedy_reward / n;
        stats.sample_nll += o.sample_nll / (o.sample.len() + 1) as f64 / n;
        stats.skipped += o.skipped as usize;
        grads.push(o.grads);
    }
    apply_update(params, adam, mean_grads(grads), lr, train.clip_norm)?;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_ce: f64,
    pub train_ld: f64,
    pub val_meteor: f64,
    pub val_cider: f64,
}

impl EpochLog {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.lr, self.train_ce, self.train_ld, self.val_meteor, self.val_cider
        )
    }
}

pub const LOG_HEADER: &str = "epoch\tlr\ttrain_ce\ttrain_ld\tval_meteor\tval_cider";

/// Greedy-decoded METEOR-lite and CIDEr-D means over `examples`.
pub fn validate(
    cfg: &SummarizerConfig,
    params: &SummarizerParams<Tensor>,
    examples: &[Example],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let sentences = examples
        .par_iter()
        .map(|ex| {
            generate(cfg, params, &ex.input, BeamConfig::greedy(max_len)).map(|g| vocab.decode_sentence(&g.words))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<Vec<String>>> = examples.iter().map(|e| e.references.clone()).collect();
    let n = examples.len() as f64;
    let meteor = sentences
        .iter()
        .zip(&refs)
        .map(|(s, r)| meteor_lite(s, r))
        .sum::<f64>()
        / n;
    let cider = CiderD::new(&refs)?;
    let cider_mean = sentences.iter().zip(&refs).map(|(s, r)| cider.score(s, r)).sum::<f64>() / n;
    Ok((meteor, cider_mean))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation METEOR-lite.
    pub best: SummarizerParams<Tensor>,
    pub best_epoch: usize,
    pub last: SummarizerParams<Tensor>,
    pub log: Vec<EpochLog>,
    pub steps: usize,
}

/// Full training run. An empty validation set validates on the training set.
pub fn train_loop(
    cfg: &SummarizerConfig,
    train: &TrainConfig,
    init: SummarizerParams<Tensor>,
    examples: &[Example],
    validation: &[Example],
    vocab: &Vocabulary,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let validation = if validation.is_empty() { examples } else { validation };
    let reward: Box<RewardFn> = match train.reward {
        RewardKind::Bleu4 => Box::new(bleu4_reward),
        RewardKind::MeteorLite => Box::new(meteor_reward(vocab)),
    };
    let mut params = init;
    let mut adam = Adam::for_params(&params, train);
    let mut best: Option<(f64, usize, SummarizerParams<Tensor>)> = None;
    let mut log = Vec::with_capacity(train.epochs);
    let mut steps = 0;
    for epoch in 0..train.epochs {
        let lr = lr_at_epoch(epoch, train);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[train.seed, epoch as u64])));
        let (mut ce_sum, mut ld_sum) = (0.0, 0.0);
        for chunk in order.chunks(train.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| mix_seed(&[train.seed, epoch as u64, steps as u64, i as u64]))
                .collect();
            let k = chunk.len() as f64;
            match train.mode {
                TrainMode::Xent => {
                    let parts = train_step(cfg, &mut params, &mut adam, &batch, train, lr, Some(&seeds))?;
                    ce_sum += parts.ce * k;
                    ld_sum += parts.ld * k;
                }
                TrainMode::Scst => {
                    let stats = scst_step(cfg, &mut params, &mut adam, &batch, train, lr, &reward, &seeds)?;
                    ce_sum += stats.sample_nll * k;
                }
            }
            steps += 1;
        }
        let (val_meteor, val_cider) = validate(cfg, &params, validation, vocab, train.max_len)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_ce: ce_sum / examples.len() as f64,
            train_ld: ld_sum / examples.len() as f64,
            val_meteor,
            val_cider,
        };
        info!("{}", entry.tsv_line());
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().map_or(true, |(m, _, _)| val_meteor > *m) {
            best = Some((val_meteor, epoch, params.clone()));
        }
    }
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_epoch,
        last: params,
        log,
        steps,
    })
}
