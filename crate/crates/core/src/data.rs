//! Corpus preprocessing, vocabulary, proposal records and model inputs.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
pub const DEFAULT_MIN_COUNT: usize = 3;

/// Lowercases and keeps only alphabetic characters; anything else that is
/// not whitespace is deleted in place before splitting on whitespace.
pub fn normalize_tokens(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_alphabetic() {
                Some(c.to_lowercase().collect::<String>())
            } else if c.is_whitespace() {
                Some(" ".to_owned())
            } else {
                None
            }
        })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Words seen at least `min_count` times get ids after the reserved ones,
    /// most frequent first, ties in lexicographic order.
    pub fn build<'a, I, S>(sentences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in sentences {
            for w in sentence {
                *counts.entry(w.as_ref()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !RESERVED.contains(w))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w.to_owned()))
            .collect();
        Vocabulary::from_words(words).expect("reserved tokens are in place")
    }

    /// Rebuilds a vocabulary from its id-ordered word list.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < RESERVED.len() || words[..RESERVED.len()] != RESERVED {
            return Err(Error::Config("vocabulary must start with <pad> <bos> <eos> <unk>".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode_sentence<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.encode(w.as_ref())).collect()
    }

    /// Words of `ids`, dropping PAD/BOS/EOS.
    pub fn decode_sentence(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.decode(id).unwrap_or(RESERVED[UNK]).to_owned())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub feature: Vec<f64>,
    pub sentence: String,
}

/// One event proposal with its segments and reference captions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub video_id: String,
    pub proposal_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub segments: Vec<Segment>,
    pub references: Vec<String>,
}

impl ProposalRecord {
    /// Checks the record invariants; the message names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.t_start < self.t_end) {
            return Err(format!(
                "record {}/{}: t_start ({}) must be below t_end ({})",
                self.video_id, self.proposal_id, self.t_start, self.t_end
            ));
        }
        let Some(first) = self.segments.first() else {
            return Err(format!("record {}/{}: segments is empty", self.video_id, self.proposal_id));
        };
        let dim = first.feature.len();
        if dim == 0 {
            return Err(format!("record {}/{}: segment 0 has an empty feature", self.video_id, self.proposal_id));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.feature.len() != dim {
                return Err(format!(
                    "record {}/{}: segment {i} feature has length {}, expected {dim}",
                    self.video_id,
                    self.proposal_id,
                    s.feature.len()
                ));
            }
            if s.feature.iter().any(|v| !v.is_finite()) {
                return Err(format!(
                    "record {}/{}: segment {i} feature has a non-finite value",
                    self.video_id, self.proposal_id
                ));
            }
        }
        if self.references.is_empty() {
            return Err(format!("record {}/{}: references is empty", self.video_id, self.proposal_id));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.segments.first().map_or(0, |s| s.feature.len())
    }

    pub fn reference_tokens(&self) -> Vec<Vec<String>> {
        self.references.iter().map(|r| normalize_tokens(r)).collect()
    }
}

/// Reads a one-JSON-object-per-line dataset, validating every record.
pub fn load_proposals(path: impl AsRef<Path>) -> Result<Vec<ProposalRecord>> {
    read_json_lines(path.as_ref(), ProposalRecord::validate)
}

pub fn write_proposals(path: impl AsRef<Path>, records: &[ProposalRecord]) -> Result<()> {
    write_json_lines(path.as_ref(), records)
}

/// One generated sentence for a temporal interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_id: Option<String>,
    pub t_start: f64,
    pub t_end: f64,
    pub sentence: String,
}

impl PredictionRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return Err(format!(
                "prediction for video {}: t_start {} must be finite and below t_end {}",
                self.video_id, self.t_start, self.t_end
            ));
        }
        Ok(())
    }
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_json_lines(path.as_ref(), PredictionRecord::validate)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    write_json_lines(path.as_ref(), records)
}

fn read_json_lines<T, V>(path: &Path, validate: V) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    V: Fn(&T) -> std::result::Result<(), String>,
{
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: T = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        validate(&record).map_err(schema)?;
        records.push(record);
    }
    Ok(records)
}

fn write_json_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// `round(linspace(0, n - 1, count))`; repeats indices when `n < count`.
pub fn sample_segment_indices(n: usize, count: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyInput("segment features"));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    let last = (n - 1) as f64;
    Ok((0..count)
        .map(|i| (i as f64 * last / (count - 1) as f64).round() as usize)
        .collect())
}

pub fn sample_segments<T: Clone>(items: &[T], count: usize) -> Result<Vec<T>> {
    Ok(sample_segment_indices(items.len(), count)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

/// Word ids laid out as `rows` sentences of exactly `width` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct WordGrid {
    pub ids: Vec<usize>,
    /// True exactly at real-token cells.
    pub mask: Vec<bool>,
    pub width: usize,
}

impl WordGrid {
    pub fn rows(&self) -> usize {
        self.ids.len() / self.width
    }
}

/// Truncates each sentence to `width` tokens and fills the rest with PAD.
pub fn pad_and_mask<S: AsRef<str>>(sentences: &[Vec<S>], vocab: &Vocabulary, width: usize) -> WordGrid {
    let mut ids = Vec::with_capacity(sentences.len() * width);
    let mut mask = Vec::with_capacity(sentences.len() * width);
    for s in sentences {
        let kept = s.len().min(width);
        ids.extend(s[..kept].iter().map(|w| vocab.encode(w.as_ref())));
        mask.extend(std::iter::repeat(true).take(kept));
        ids.extend(std::iter::repeat(PAD).take(width - kept));
        mask.extend(std::iter::repeat(false).take(width - kept));
    }
    WordGrid { ids, mask, width }
}

/// Model input for one proposal: sampled segment features and the padded
/// grid of their sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalInput {
    /// `[N_m × D]`
    pub features: Tensor,
    pub words: WordGrid,
}

impl ProposalInput {
    pub fn from_record(record: &ProposalRecord, vocab: &Vocabulary, segments: usize, words: usize) -> Result<Self> {
        let picked = sample_segments(&record.segments, segments)?;
        let dim = record.feature_dim();
        let features = Tensor::matrix(
            segments,
            dim,
            picked.iter().flat_map(|s| s.feature.iter().copied()).collect(),
        )?;
        let sentences: Vec<Vec<String>> = picked.iter().map(|s| normalize_tokens(&s.sentence)).collect();
        Ok(ProposalInput {
            features,
            words: pad_and_mask(&sentences, vocab, words),
        })
    }

    /// Visual input of a single segment, used by the segment captioner.
    pub fn single_segment(feature: &[f64]) -> Result<Self> {
        Ok(ProposalInput {
            features: Tensor::matrix(1, feature.len(), feature.to_vec())?,
            words: WordGrid {
                ids: vec![PAD],
                mask: vec![false],
                width: 1,
            },
        })
    }
}

/// `[BOS] words… [EOS]`, keeping at most `max_len - 1` words so the decoder
/// emits at most `max_len` tokens including EOS.
pub fn encode_target<S: AsRef<str>>(words: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let keep = words.len().min(max_len.saturating_sub(1));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(BOS);
    ids.extend(vocab.encode_sentence(&words[..keep]));
    ids.push(EOS);
    ids
}

/// Bag-of-words indicator over the vocabulary, ignoring PAD/BOS/EOS.
pub fn word_occurrences(target: &[usize], vocab_size: usize) -> Vec<f64> {
    let mut occ = vec![0.0; vocab_size];
    for &id in target {
        if !matches!(id, PAD | BOS | EOS) && id < vocab_size {
            occ[id] = 1.0;
        }
    }
    occ
}
