//! Dense captioning evaluation across temporal IoU thresholds.
//!
//! For every threshold each prediction is paired with every ground-truth
//! event of the same video whose IoU reaches the threshold. Pairs are scored
//! at sentence level; a prediction without any such event contributes one
//! all-zero entry. Per-threshold scores are the mean over entries and the
//! headline score is the mean over the four thresholds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bleu::{sentence_bleu_all, Smoothing};
use crate::cider::CiderD;
use crate::iou::{temporal_iou, Interval};
use crate::meteor::meteor_lite;
use crate::rouge::rouge_l;
use crate::MetricError;

pub const IOU_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider_d: f64,
}

impl MetricScores {
    pub const NAMES: [&'static str; 7] =
        ["Bleu_1", "Bleu_2", "Bleu_3", "Bleu_4", "ROUGE_L", "METEOR", "CIDEr-D"];

    pub fn to_array(self) -> [f64; 7] {
        [
            self.bleu_1,
            self.bleu_2,
            self.bleu_3,
            self.bleu_4,
            self.rouge_l,
            self.meteor,
            self.cider_d,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        MetricScores {
            bleu_1: a[0],
            bleu_2: a[1],
            bleu_3: a[2],
            bleu_4: a[3],
            rouge_l: a[4],
            meteor: a[5],
            cider_d: a[6],
        }
    }

    /// Elementwise mean; zero for an empty slice.
    pub fn mean(items: &[MetricScores]) -> MetricScores {
        if items.is_empty() {
            return MetricScores::default();
        }
        let mut acc = [0.0; 7];
        for s in items {
            for (a, v) in acc.iter_mut().zip(s.to_array()) {
                *a += v;
            }
        }
        MetricScores::from_array(acc.map(|a| a / items.len() as f64))
    }

    /// Elementwise maximum.
    pub fn max(self, other: MetricScores) -> MetricScores {
        let a = self.to_array();
        let b = other.to_array();
        MetricScores::from_array(std::array::from_fn(|i| a[i].max(b[i])))
    }
}

/// Scores every (candidate, references) pair. CIDEr-D document frequencies
/// come from the references of the pairs given.
pub fn score_pairs<S, R>(pairs: &[(Vec<S>, Vec<R>)]) -> Result<Vec<MetricScores>, MetricError>
where
    S: AsRef<str> + Eq + std::hash::Hash + Clone,
    R: AsRef<[S]>,
{
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let ref_sets: Vec<Vec<&[S]>> = pairs
        .iter()
        .map(|(_, rs)| rs.iter().map(AsRef::as_ref).collect())
        .collect();
    let cider = CiderD::new(&ref_sets)?;
    Ok(pairs
        .iter()
        .zip(&ref_sets)
        .map(|((cand, _), refs)| {
            let b = sentence_bleu_all(cand, refs, Smoothing::None);
            MetricScores {
                bleu_1: b[0],
                bleu_2: b[1],
                bleu_3: b[2],
                bleu_4: b[3],
                rouge_l: rouge_l(cand, refs),
                meteor: meteor_lite(cand.as_slice(), refs),
                cider_d: cider.score(cand, refs),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalPrediction {
    pub video_id: String,
    pub interval: Interval,
    pub sentence: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub video_id: String,
    pub interval: Interval,
    pub references: Vec<Vec<String>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairAggregation {
    /// Mean over every (prediction, overlapping event) pair.
    #[default]
    AveragePairs,
    /// Each prediction keeps its best pair; mean over predictions.
    BestPerPrediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub scores: MetricScores,
    pub matched_pairs: usize,
    pub unmatched_predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: PairAggregation,
    pub predictions: usize,
    pub ground_truth_events: usize,
    pub per_threshold: Vec<ThresholdReport>,
    pub mean: MetricScores,
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let rule = match self.aggregation {
            PairAggregation::AveragePairs => "mean over (prediction, GT) pairs with IoU >= threshold",
            PairAggregation::BestPerPrediction => "best GT pair per prediction, mean over predictions",
        };
        let _ = writeln!(out, "# pairing: {rule}; unmatched predictions score 0");
        let _ = writeln!(
            out,
            "# predictions: {}  ground-truth events: {}",
            self.predictions, self.ground_truth_events
        );
        let _ = write!(out, "{:<8}", "IoU");
        for name in MetricScores::NAMES {
            let _ = write!(out, "{name:>10}");
        }
        let _ = writeln!(out, "{:>8}{:>10}", "pairs", "unmatched");
        for t in &self.per_threshold {
            let _ = write!(out, "{:<8.1}", t.threshold);
            for v in t.scores.to_array() {
                let _ = write!(out, "{v:>10.4}");
            }
            let _ = writeln!(out, "{:>8}{:>10}", t.matched_pairs, t.unmatched_predictions);
        }
        let _ = write!(out, "{:<8}", "mean");
        for v in self.mean.to_array() {
            let _ = write!(out, "{v:>10.4}");
        }
        out.push('\n');
        out
    }
}

/// Evaluates predictions against ground truth at every IoU threshold.
pub fn dense_eval(
    predictions: &[TemporalPrediction],
    ground_truth: &[GroundTruthEvent],
    aggregation: PairAggregation,
) -> Result<EvalReport, MetricError> {
    if ground_truth.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    if predictions.is_empty() {
        log::warn!("no predictions given; every score is zero");
    }
    let mut ious = Vec::with_capacity(predictions.len());
    for p in predictions {
        let mut row = Vec::new();
        for (g_idx, g) in ground_truth.iter().enumerate() {
            if g.video_id == p.video_id {
                row.push((g_idx, temporal_iou(p.interval, g.interval)?));
            }
        }
        ious.push(row);
    }

    let mut per_threshold = Vec::with_capacity(IOU_THRESHOLDS.len());
    for &threshold in &IOU_THRESHOLDS {
        let mut pairs: Vec<(Vec<&str>, Vec<Vec<&str>>)> = Vec::new();
        // owner prediction of each pair
        let mut owner = Vec::new();
        let mut unmatched = 0;
        for (p_idx, p) in predictions.iter().enumerate() {
            let mut any = false;
            for &(g_idx, iou) in &ious[p_idx] {
                if iou >= threshold {
                    any = true;
                    let cand = p.sentence.iter().map(String::as_str).collect();
                    let refs = ground_truth[g_idx]
                        .references
                        .iter()
                        .map(|r| r.iter().map(String::as_str).collect())
                        .collect();
                    pairs.push((cand, refs));
                    owner.push(p_idx);
                }
            }
            if !any {
                unmatched += 1;
            }
        }
        let pair_scores = score_pairs(&pairs)?;
        let scores = match aggregation {
            PairAggregation::AveragePairs => {
                let mut entries = pair_scores.clone();
                entries.extend(std::iter::repeat(MetricScores::default()).take(unmatched));
                MetricScores::mean(&entries)
            }
            PairAggregation::BestPerPrediction => {
                let mut best = vec![MetricScores::default(); predictions.len()];
                for (s, &p_idx) in pair_scores.iter().zip(&owner) {
                    best[p_idx] = best[p_idx].max(*s);
                }
                MetricScores::mean(&best)
            }
        };
        per_threshold.push(ThresholdReport {
            threshold,
            scores,
            matched_pairs: pairs.len(),
            unmatched_predictions: unmatched,
        });
    }
    let mean = MetricScores::mean(&per_threshold.iter().map(|t| t.scores).collect::<Vec<_>>());
    Ok(EvalReport {
        aggregation,
        predictions: predictions.len(),
        ground_truth_events: ground_truth.len(),
        per_threshold,
        mean,
    })
}
