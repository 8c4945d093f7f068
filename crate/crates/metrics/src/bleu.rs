//! BLEU with clipped n-gram precision, geometric mean and brevity penalty.

use std::collections::HashMap;
use std::hash::Hash;

use crate::ngram::ngram_counts;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Any zero precision up to the requested order yields a score of zero.
    #[default]
    None,
    /// Add one to matched and total n-gram counts of every order.
    AddOne,
}

/// Matched/total n-gram counts plus the lengths needed for the brevity penalty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matched: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn collect<T, R>(candidate: &[T], references: &[R]) -> Self
    where
        T: Eq + Hash,
        R: AsRef<[T]>,
    {
        let mut stats = BleuStats {
            candidate_len: candidate.len(),
            reference_len: closest_reference_len(candidate.len(), references),
            ..Default::default()
        };
        for order in 1..=MAX_ORDER {
            let cand = ngram_counts(candidate, order);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for reference in references {
                for (gram, count) in ngram_counts(reference.as_ref(), order) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            let mut matched = 0;
            let mut total = 0;
            for (gram, count) in cand {
                total += count;
                matched += count.min(max_ref.get(gram).copied().unwrap_or(0));
            }
            stats.matched[order - 1] = matched;
            stats.total[order - 1] = total;
        }
        stats
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for k in 0..MAX_ORDER {
            self.matched[k] += other.matched[k];
            self.total[k] += other.total[k];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// BLEU-`order` from accumulated statistics.
    pub fn score(&self, order: usize, smoothing: Smoothing) -> f64 {
        assert!((1..=MAX_ORDER).contains(&order), "BLEU order must be in 1..=4");
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..order {
            let (m, t) = match smoothing {
                Smoothing::None => (self.matched[k] as f64, self.total[k] as f64),
                Smoothing::AddOne => (self.matched[k] as f64 + 1.0, self.total[k] as f64 + 1.0),
            };
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        brevity_penalty(self.candidate_len, self.reference_len) * (log_sum / order as f64).exp()
    }
}

/// Reference length closest to the candidate length; ties go to the shorter one.
fn closest_reference_len<T, R: AsRef<[T]>>(candidate_len: usize, references: &[R]) -> usize {
    references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(candidate_len), len))
        .unwrap_or(0)
}

pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Sentence-level BLEU-`order`.
pub fn sentence_bleu<T, R>(candidate: &[T], references: &[R], order: usize, smoothing: Smoothing) -> f64
where
    T: Eq + Hash,
    R: AsRef<[T]>,
{
    if candidate.is_empty() {
        log::warn!("empty candidate scored as 0 BLEU");
        return 0.0;
    }
    BleuStats::collect(candidate, references).score(order, smoothing)
}

/// BLEU-1 through BLEU-4 for one candidate.
pub fn sentence_bleu_all<T, R>(candidate: &[T], references: &[R], smoothing: Smoothing) -> [f64; MAX_ORDER]
where
    T: Eq + Hash,
    R: AsRef<[T]>,
{
    if candidate.is_empty() {
        log::warn!("empty candidate scored as 0 BLEU");
        return [0.0; MAX_ORDER];
    }
    let stats = BleuStats::collect(candidate, references);
    std::array::from_fn(|k| stats.score(k + 1, smoothing))
}

/// Corpus-level BLEU: statistics are summed over all pairs before scoring.
pub fn corpus_bleu<T, R, C>(pairs: &[(C, Vec<R>)], order: usize, smoothing: Smoothing) -> f64
where
    T: Eq + Hash,
    R: AsRef<[T]>,
    C: AsRef<[T]>,
{
    let mut total = BleuStats::default();
    for (candidate, references) in pairs {
        total.merge(&BleuStats::collect(candidate.as_ref(), references));
    }
    total.score(order, smoothing)
}
