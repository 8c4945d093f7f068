//! CIDEr-D: TF-IDF weighted n-gram cosine similarity (orders 1..4) with
//! clipped candidate weights and a Gaussian length penalty, scaled by 10.
//! Document frequencies are computed once per corpus and shared read-only.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::ngram::ngram_counts;
use crate::MetricError;

pub const CIDER_MAX_ORDER: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

/// Per-order TF-IDF vectors of one sentence.
struct Weighted<'a, T> {
    vecs: Vec<HashMap<&'a [T], f64>>,
    norms: Vec<f64>,
    len: usize,
}

#[derive(Clone, Debug)]
pub struct CiderD<T: Eq + Hash> {
    doc_freq: HashMap<Vec<T>, usize>,
    log_doc_count: f64,
}

impl<T: Eq + Hash + Clone> CiderD<T> {
    /// Builds document frequencies from one reference set per corpus entry.
    pub fn new<R: AsRef<[T]>>(reference_sets: &[Vec<R>]) -> Result<Self, MetricError> {
        if reference_sets.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut doc_freq: HashMap<Vec<T>, usize> = HashMap::new();
        for refs in reference_sets {
            let mut seen: HashSet<&[T]> = HashSet::new();
            for r in refs {
                for order in 1..=CIDER_MAX_ORDER {
                    seen.extend(ngram_counts(r.as_ref(), order).into_keys());
                }
            }
            for gram in seen {
                *doc_freq.entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
        Ok(CiderD {
            doc_freq,
            log_doc_count: (reference_sets.len() as f64).ln(),
        })
    }

    fn weigh<'a>(&self, tokens: &'a [T]) -> Weighted<'a, T> {
        let mut vecs = Vec::with_capacity(CIDER_MAX_ORDER);
        let mut norms = Vec::with_capacity(CIDER_MAX_ORDER);
        for order in 1..=CIDER_MAX_ORDER {
            let mut vec = HashMap::new();
            let mut sq = 0.0;
            for (gram, tf) in ngram_counts(tokens, order) {
                let df = self.doc_freq.get(gram).copied().unwrap_or(0).max(1) as f64;
                let w = tf as f64 * (self.log_doc_count - df.ln());
                sq += w * w;
                vec.insert(gram, w);
            }
            vecs.push(vec);
            norms.push(sq.sqrt());
        }
        Weighted {
            vecs,
            norms,
            len: tokens.len(),
        }
    }

    /// Score of one candidate against its references, in [0, 10].
    pub fn score<R: AsRef<[T]>>(&self, candidate: &[T], references: &[R]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let cand = self.weigh(candidate);
        let mut per_order = [0.0f64; CIDER_MAX_ORDER];
        for r in references {
            let reference = self.weigh(r.as_ref());
            let delta = cand.len as f64 - reference.len as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for (k, slot) in per_order.iter_mut().enumerate() {
                let mut val = 0.0;
                for (gram, &w) in &cand.vecs[k] {
                    if let Some(&wr) = reference.vecs[k].get(gram) {
                        val += w.min(wr) * wr;
                    }
                }
                if cand.norms[k] != 0.0 && reference.norms[k] != 0.0 {
                    val /= cand.norms[k] * reference.norms[k];
                }
                *slot += val * penalty;
            }
        }
        let mean = per_order.iter().sum::<f64>() / CIDER_MAX_ORDER as f64;
        10.0 * mean / references.len() as f64
    }
}

/// Per-candidate CIDEr-D over a corpus of (candidate, references) entries.
pub fn cider_d<T, C, R>(corpus: &[(C, Vec<R>)]) -> Result<Vec<f64>, MetricError>
where
    T: Eq + Hash + Clone,
    C: AsRef<[T]>,
    R: AsRef<[T]>,
{
    let refs: Vec<Vec<&[T]>> = corpus
        .iter()
        .map(|(_, rs)| rs.iter().map(AsRef::as_ref).collect())
        .collect();
    let scorer = CiderD::new(&refs)?;
    Ok(corpus
        .iter()
        .zip(&refs)
        .map(|((c, _), rs)| scorer.score(c.as_ref(), rs))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_unique_pair_scores_ten() {
        let corpus = vec![
            (toks("a man rides a horse"), vec![toks("a man rides a horse")]),
            (toks("dogs play"), vec![toks("two dogs play in snow")]),
        ];
        let scores = cider_d(&corpus).unwrap();
        assert!((scores[0] - 10.0).abs() < 1e-12, "{}", scores[0]);
    }

    #[test]
    fn disjoint_scores_zero() {
        let corpus = vec![
            (toks("x y z w"), vec![toks("a b c d")]),
            (toks("e f"), vec![toks("g h")]),
        ];
        assert_eq!(cider_d(&corpus).unwrap()[0], 0.0);
    }

    #[test]
    fn empty_corpus_is_error() {
        let corpus: Vec<(Vec<&str>, Vec<Vec<&str>>)> = vec![];
        assert!(cider_d(&corpus).is_err());
    }

    #[test]
    fn single_document_has_zero_idf() {
        let corpus = vec![(toks("a b c d"), vec![toks("a b c d")])];
        assert_eq!(cider_d(&corpus).unwrap()[0], 0.0);
    }
}
