//! Toy proposal corpora: each class has a prototype feature vector and a
//! fixed sentence; segments carry noisy copies of both.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ProposalRecord, Segment};
use crate::error::{Error, Result};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ro", "vi", "de", "pa", "zu", "fe", "go", "hi", "ju", "be",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub proposals: usize,
    pub classes: usize,
    pub feature_dim: usize,
    /// Segments per proposal are drawn from this inclusive range.
    pub min_segments: usize,
    pub max_segments: usize,
    pub sentence_len: usize,
    /// Distinct words the sentences draw from.
    pub word_pool: usize,
    /// Std-dev-like scale of uniform feature noise.
    pub feature_noise: f64,
    /// Chance that a segment-sentence word is replaced by a random one.
    pub word_noise: f64,
    /// Chance that a segment-sentence word is dropped.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            proposals: 24,
            classes: 6,
            feature_dim: 16,
            min_segments: 3,
            max_segments: 8,
            sentence_len: 5,
            word_pool: 24,
            feature_noise: 0.1,
            word_noise: 0.1,
            drop_rate: 0.1,
            seed: 0,
        }
    }
}

/// Alphabetic pseudo-words, distinct for distinct indices.
pub fn word(index: usize) -> String {
    let mut out = String::new();
    let mut i = index;
    loop {
        out.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
        if i == 0 {
            break;
        }
        i -= 1;
    }
    out
}

pub struct SyntheticCorpus {
    pub records: Vec<ProposalRecord>,
    /// Class of every record.
    pub classes: Vec<usize>,
    pub class_sentences: Vec<Vec<String>>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.proposals == 0 || cfg.classes == 0 || cfg.feature_dim == 0 || cfg.sentence_len == 0 {
        return Err(Error::Config("synthetic corpus extents must be positive".into()));
    }
    if cfg.min_segments == 0 || cfg.min_segments > cfg.max_segments {
        return Err(Error::Config(format!(
            "segment range {}..={} is empty",
            cfg.min_segments, cfg.max_segments
        )));
    }
    if cfg.word_pool < cfg.sentence_len {
        return Err(Error::Config("word_pool must cover a full sentence".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<String> = (0..cfg.word_pool).map(word).collect();
    let prototypes: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let class_sentences: Vec<Vec<String>> = (0..cfg.classes)
        .map(|_| (0..cfg.sentence_len).map(|_| pool.choose(&mut rng).unwrap().clone()).collect())
        .collect();

    let mut records = Vec::with_capacity(cfg.proposals);
    let mut classes = Vec::with_capacity(cfg.proposals);
    for p in 0..cfg.proposals {
        let class = p % cfg.classes;
        let n = rng.gen_range(cfg.min_segments..=cfg.max_segments);
        let segments = (0..n)
            .map(|_| {
                let feature = prototypes[class]
                    .iter()
                    .map(|v| v + cfg.feature_noise * rng.gen_range(-1.0..1.0))
                    .collect();
                let mut words = Vec::new();
                for w in &class_sentences[class] {
                    if rng.gen::<f64>() < cfg.drop_rate {
                        continue;
                    }
                    if rng.gen::<f64>() < cfg.word_noise {
                        words.push(pool.choose(&mut rng).unwrap().clone());
                    } else {
                        words.push(w.clone());
                    }
                }
                Segment {
                    feature,
                    sentence: words.join(" "),
                }
            })
            .collect();
        let t_start = rng.gen_range(0.0..100.0f64).round();
        let t_end = t_start + (2 * n) as f64;
        records.push(ProposalRecord {
            video_id: format!("video_{}", p / 2),
            proposal_id: format!("p{p}"),
            t_start,
            t_end,
            segments,
            references: vec![class_sentences[class].join(" ")],
        });
        classes.push(class);
    }
    Ok(SyntheticCorpus {
        records,
        classes,
        class_sentences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize_tokens;

    #[test]
    fn words_are_alphabetic_and_distinct() {
        let ws: Vec<String> = (0..400).map(word).collect();
        let set: std::collections::HashSet<&String> = ws.iter().collect();
        assert_eq!(set.len(), ws.len());
        assert!(ws.iter().all(|w| normalize_tokens(w) == vec![w.clone()]));
    }

    #[test]
    fn records_validate_and_are_seeded() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a.records.len(), 24);
        assert!(a.records.iter().all(|r| r.validate().is_ok()));
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
    }
}
