//! Toy-scale experiment harnesses: attention-mode and fusion ablations,
//! the λ_d sweep and the N_m sweep. Each setting trains on a synthetic
//! corpus and scores held-out proposals.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use das_metrics::{score_pairs, MetricScores};

use crate::data::{normalize_tokens, sample_segments, ProposalInput, ProposalRecord, Vocabulary};
use crate::decode::{dm_best_select_log, generate, score_sentence, BeamConfig};
use crate::error::{Error, Result};
use crate::model::{AttentionMode, SummarizerConfig, SummarizerParams};
use crate::synthetic::{self, SyntheticConfig};
use crate::tensor::Tensor;
use crate::train::{build_examples, mix_seed, train_loop, vocabulary_from_records, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: SummarizerConfig,
    pub train: TrainConfig,
    pub data: SyntheticConfig,
    pub beam: usize,
    pub min_count: usize,
    /// One proposal in `holdout_every` is held out for scoring.
    pub holdout_every: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            model: SummarizerConfig {
                n_segments: 4,
                n_words: 5,
                feature_dim: 16,
                hidden: 32,
                embed: 32,
                vocab_size: 0,
                attention_hidden: 16,
                mlp_hidden: 32,
                mode: AttentionMode::Hierarchical,
                keep_prob: 0.8,
                visual_encoder: true,
                visual_decoder: true,
            },
            // Toy corpora need a larger step size than the full-scale default.
            train: TrainConfig {
                epochs: 80,
                lr: 3e-3,
                decay_every: 20,
                batch_size: 8,
                max_len: 10,
                ..TrainConfig::default()
            },
            data: SyntheticConfig {
                proposals: 48,
                classes: 8,
                feature_noise: 0.25,
                word_noise: 0.15,
                drop_rate: 0.15,
                ..SyntheticConfig::default()
            },
            beam: 3,
            min_count: 1,
            holdout_every: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub scores: MetricScores,
    /// Teacher-forced CE of the last epoch (NaN for rows without training).
    pub final_ce: f64,
}

struct Split {
    train: Vec<ProposalRecord>,
    test: Vec<ProposalRecord>,
    vocab: Vocabulary,
}

fn split(spec: &ExperimentSpec) -> Result<Split> {
    let corpus = synthetic::generate(&spec.data)?;
    let (train, test) = holdout_split(corpus.records, spec.holdout_every, spec.data.seed)?;
    let vocab = vocabulary_from_records(&train, spec.min_count);
    Ok(Split { train, test, vocab })
}

/// Seeded shuffle, then every `every`-th record goes to the test side.
/// Synthetic classes cycle with the proposal index, so a plain stride
/// would hold out whole classes.
pub fn holdout_split(
    records: Vec<ProposalRecord>,
    every: usize,
    seed: u64,
) -> Result<(Vec<ProposalRecord>, Vec<ProposalRecord>)> {
    if every < 2 {
        return Err(Error::Config("holdout_every must be at least 2".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1])));
    let mut slots: Vec<Option<ProposalRecord>> = records.into_iter().map(Some).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (rank, &i) in order.iter().enumerate() {
        let r = slots[i].take().expect("each index once");
        if rank % every == every - 1 {
            test.push(r);
        } else {
            train.push(r);
        }
    }
    if test.is_empty() || train.is_empty() {
        return Err(Error::Config("corpus too small to hold out a test split".into()));
    }
    Ok((train, test))
}

fn train_model(spec: &ExperimentSpec, model: &SummarizerConfig, s: &Split) -> Result<(SummarizerParams<Tensor>, f64)> {
    let mut model = model.clone();
    model.vocab_size = s.vocab.len();
    model.feature_dim = spec.data.feature_dim;
    let examples = build_examples(&s.train, &s.vocab, &model, spec.train.max_len)?;
    let init = SummarizerParams::init(&model, spec.train.seed)?;
    let out = train_loop(&model, &spec.train, init, &examples, &[], &s.vocab, |_| {})?;
    let ce = out.log.last().map_or(f64::NAN, |l| l.train_ce);
    Ok((out.last, ce))
}

fn resolved(spec: &ExperimentSpec, model: &SummarizerConfig, s: &Split) -> SummarizerConfig {
    let mut m = model.clone();
    m.vocab_size = s.vocab.len();
    m.feature_dim = spec.data.feature_dim;
    m
}

fn mean_scores(pairs: &[(Vec<String>, Vec<Vec<String>>)]) -> Result<MetricScores> {
    Ok(MetricScores::mean(&score_pairs(pairs)?))
}

fn summarizer_row(label: &str, spec: &ExperimentSpec, model: &SummarizerConfig, s: &Split) -> Result<ExperimentRow> {
    let (params, ce) = train_model(spec, model, s)?;
    let cfg = resolved(spec, model, s);
    let pairs = s
        .test
        .par_iter()
        .map(|r| {
            let input = ProposalInput::from_record(r, &s.vocab, cfg.n_segments, cfg.n_words)?;
            let g = generate(&cfg, &params, &input, BeamConfig::new(spec.beam, spec.train.max_len))?;
            Ok((s.vocab.decode_sentence(&g.words), r.reference_tokens()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentRow {
        label: label.to_string(),
        scores: mean_scores(&pairs)?,
        final_ce: ce,
    })
}

/// One training-and-scoring run with `spec` as given.
pub fn run_setting(label: &str, spec: &ExperimentSpec) -> Result<ExperimentRow> {
    let s = split(spec)?;
    summarizer_row(label, spec, &spec.model, &s)
}

/// λ_d grid, e.g. `[0, 0.01, 0.1, 1]`.
pub fn lambda_sweep(spec: &ExperimentSpec, lambdas: &[f64]) -> Result<Vec<ExperimentRow>> {
    let s = split(spec)?;
    lambdas
        .iter()
        .map(|&l| {
            let mut sp = spec.clone();
            sp.train.lambda_d = l;
            summarizer_row(&format!("lambda_d={l}"), &sp, &sp.model, &s)
        })
        .collect()
}

/// N_m grid, e.g. `[10, 20, 40]`.
pub fn segment_sweep(spec: &ExperimentSpec, counts: &[usize]) -> Result<Vec<ExperimentRow>> {
    let s = split(spec)?;
    counts
        .iter()
        .map(|&n| {
            let mut model = spec.model.clone();
            model.n_segments = n;
            summarizer_row(&format!("N_m={n}"), spec, &model, &s)
        })
        .collect()
}

/// TA, SA and HA summarizers, HA without visual fusion on either side, and
/// the two division-output baselines scored with the TA model.
pub fn mode_comparison(spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    let s = split(spec)?;
    let with_mode = |mode| SummarizerConfig {
        mode,
        ..spec.model.clone()
    };
    let ta_cfg = with_mode(AttentionMode::DecoderOnly);
    let (ta_params, ta_ce) = train_model(spec, &ta_cfg, &s)?;
    let ta_resolved = resolved(spec, &ta_cfg, &s);

    let mut rows = Vec::new();
    let mut ta_pairs = Vec::new();
    let mut ave_pairs = Vec::new();
    let mut best_pairs = Vec::new();
    for r in &s.test {
        let refs = r.reference_tokens();
        let input = ProposalInput::from_record(r, &s.vocab, ta_resolved.n_segments, ta_resolved.n_words)?;
        let g = generate(&ta_resolved, &ta_params, &input, BeamConfig::new(spec.beam, spec.train.max_len))?;
        ta_pairs.push((s.vocab.decode_sentence(&g.words), refs.clone()));

        let segments = sample_segments(&r.segments, ta_resolved.n_segments)?;
        let mut confidences = Vec::with_capacity(segments.len());
        let mut sentences = Vec::with_capacity(segments.len());
        for seg in &segments {
            let words = normalize_tokens(&seg.sentence);
            let ids = s.vocab.encode_sentence(&words);
            let lp = if ids.is_empty() {
                vec![f64::NEG_INFINITY]
            } else {
                score_sentence(&ta_resolved, &ta_params, &ProposalInput::single_segment(&seg.feature)?, &ids)?
            };
            confidences.push(lp);
            ave_pairs.push((words.clone(), refs.clone()));
            sentences.push(words);
        }
        let best = dm_best_select_log(&confidences)?;
        best_pairs.push((sentences[best].clone(), refs));
    }
    rows.push(ExperimentRow {
        label: "TA".into(),
        scores: mean_scores(&ta_pairs)?,
        final_ce: ta_ce,
    });
    rows.push(ExperimentRow {
        label: "DM-ave".into(),
        scores: mean_scores(&ave_pairs)?,
        final_ce: f64::NAN,
    });
    rows.push(ExperimentRow {
        label: "DM-best".into(),
        scores: mean_scores(&best_pairs)?,
        final_ce: f64::NAN,
    });
    rows.push(summarizer_row("SA", spec, &with_mode(AttentionMode::Simple), &s)?);
    rows.push(summarizer_row("HA", spec, &with_mode(AttentionMode::Hierarchical), &s)?);
    for (label, enc, dec) in [
        ("HA w/o VF-E", false, true),
        ("HA w/o VF-D", true, false),
        ("HA w/o VF-ED", false, false),
    ] {
        let model = SummarizerConfig {
            visual_encoder: enc,
            visual_decoder: dec,
            ..with_mode(AttentionMode::Hierarchical)
        };
        rows.push(summarizer_row(label, spec, &model, &s)?);
    }
    Ok(rows)
}

pub fn render_rows(rows: &[ExperimentRow]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "setting");
    for n in MetricScores::NAMES {
        let _ = write!(out, " {n:>8}");
    }
    let _ = writeln!(out, " {:>8}", "train_ce");
    for r in rows {
        let _ = write!(out, "{:<14}", r.label);
        for v in r.scores.to_array() {
            let _ = write!(out, " {:>8.4}", v);
        }
        let _ = writeln!(out, " {:>8.4}", r.final_ce);
    }
    out
}
