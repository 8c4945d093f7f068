//! Binary checkpoint: `DASC` magic, u32 LE version, u64 LE header length,
//! JSON header, then every tensor as little-endian f64 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{SummarizerConfig, SummarizerParams};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"DASC";
pub const VERSION: u32 = 1;
pub const GATE_ORDER: &str = "i,f,o,g";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: SummarizerConfig,
    train: Option<TrainConfig>,
    vocabulary: Vec<String>,
    seed: u64,
    epoch: usize,
    gate_order: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SummarizerConfig,
    pub train: Option<TrainConfig>,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub epoch: usize,
    pub params: SummarizerParams<Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for (name, t) in self.params.named() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset_bytes: offset,
            });
            offset += 8 * t.len() as u64;
        }
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            vocabulary: self.vocab.words().to_vec(),
            seed: self.seed,
            epoch: self.epoch,
            gate_order: GATE_ORDER.into(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.named() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing DASC magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.gate_order != GATE_ORDER {
            return Err(Error::Checkpoint(format!("unsupported gate order {}", header.gate_order)));
        }
        header.model.validate()?;
        let payload = &bytes[header_end..];

        let template = SummarizerParams::init(&header.model, 0)?;
        let expected = template.named();
        if expected.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "config needs {} tensors, header lists {}",
                expected.len(),
                header.tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(expected.len());
        let mut cursor = 0u64;
        for ((name, want), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || want.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    want.shape()
                )));
            }
            if entry.offset_bytes < cursor {
                return Err(Error::Checkpoint(format!("tensor {} overlaps its predecessor", entry.name)));
            }
            let len = want.len();
            let start = entry.offset_bytes as usize;
            let end = start
                .checked_add(8 * len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the payload", entry.name)))?;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            values.push(Tensor::new(entry.shape.clone(), data)?);
            cursor = end as u64;
        }
        let vocab = Vocabulary::from_words(header.vocabulary)?;
        if vocab.len() != header.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} words but the model expects {}",
                vocab.len(),
                header.model.vocab_size
            )));
        }
        Ok(Checkpoint {
            params: template.with_values(&values),
            model: header.model,
            train: header.train,
            vocab,
            seed: header.seed,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;

    fn sample() -> Checkpoint {
        let mut model = SummarizerConfig::tiny(AttentionMode::Hierarchical);
        let words: Vec<String> = crate::data::RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain((0..16).map(|i| format!("w{}", char::from(b'a' + i as u8))))
            .collect();
        model.vocab_size = words.len();
        Checkpoint {
            params: SummarizerParams::init(&model, 3).unwrap(),
            model,
            train: Some(TrainConfig::default()),
            vocab: Vocabulary::from_words(words).unwrap(),
            seed: 3,
            epoch: 2,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for ((_, a), (_, b)) in ck.params.named().iter().zip(back.params.named()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.model, ck.model);
        assert_eq!(back.vocab, ck.vocab);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
    }
}
