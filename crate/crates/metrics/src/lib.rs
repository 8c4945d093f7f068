//! Caption metrics (BLEU, ROUGE-L, METEOR-lite, CIDEr-D) and the
//! IoU-thresholded dense captioning evaluation.

pub mod bleu;
pub mod cider;
pub mod dense;
pub mod iou;
pub mod meteor;
mod ngram;
pub mod rouge;

pub use bleu::{corpus_bleu, sentence_bleu, sentence_bleu_all, BleuStats, Smoothing};
pub use cider::{cider_d, CiderD};
pub use dense::{
    dense_eval, score_pairs, EvalReport, GroundTruthEvent, MetricScores, PairAggregation,
    TemporalPrediction, ThresholdReport, IOU_THRESHOLDS,
};
pub use iou::{temporal_iou, Interval};
pub use meteor::{meteor_lite, meteor_pair};
pub use rouge::{lcs_len, rouge_l};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("CIDEr-D needs a non-empty corpus")]
    EmptyCorpus,
    #[error("degenerate interval [{start}, {end}]: start must be below end")]
    DegenerateInterval { start: f64, end: f64 },
    #[error("dense evaluation needs at least one ground-truth event")]
    EmptyGroundTruth,
}
