use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::normalize;

/// Static word vectors. Absent words map to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    /// Parses `word v1 … vd` lines. A leading fastText `count dim` header
    /// line is skipped. Later duplicates replace earlier ones.
    pub fn parse(text: &str, expected_dim: usize) -> Result<Self> {
        if expected_dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            if i == 0 && parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
                continue;
            }
            if parts.len() != expected_dim + 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {expected_dim} values, found {}", parts.len() - 1),
                });
            }
            let values = parts[1..]
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("{v:?} is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if vectors.insert(parts[0].to_string(), values).is_some() {
                log::warn!("embedding line {}: duplicate word {:?}, keeping the later vector", i + 1, parts[0]);
            }
        }
        Ok(EmbeddingTable {
            dim: expected_dim,
            vectors,
            zero: vec![0.0; expected_dim],
        })
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, expected_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn lookup(&self, word: &str) -> &[f64] {
        self.vectors.get(word).map_or(&self.zero, Vec::as_slice)
    }
}

/// A `seq_len × d` word-vector matrix with its real-row mask.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticSequence {
    pub matrix: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<u8>,
}

impl StaticSequence {
    pub fn real_length(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Word-level lookup, truncated or zero-padded to `seq_len` rows. There are
/// no `[CLS]`/`[SEP]` rows.
pub fn static_embed_sequence(text: &str, table: &EmbeddingTable, seq_len: usize) -> StaticSequence {
    let d = table.dim();
    let mut matrix = vec![0.0; seq_len * d];
    let mut mask = vec![0; seq_len];
    for (i, w) in normalize(text).split_whitespace().take(seq_len).enumerate() {
        matrix[i * d..(i + 1) * d].copy_from_slice(table.lookup(w));
        mask[i] = 1;
    }
    StaticSequence {
        matrix,
        rows: seq_len,
        cols: d,
        mask,
    }
}
