//! Datasets, fingerprints and on-disk formats.

mod rndt;
mod tokens;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use rndt::{decode_rndt, encode_rndt, load_tensor_file, save_tensor_file};
pub use tokens::{
    build_vocab, build_vocab_from_counts, load_token_file, parse_corpus, save_token_files, BuiltVocab,
    TokenDataset, Vocab, PAD_TOKEN, UNK_TOKEN,
};

/// Fixed-shape real-valued examples stored contiguously, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    example_shape: Vec<usize>,
    values: Vec<f32>,
    count: usize,
    fingerprint: String,
}

impl TensorDataset {
    /// `example_shape` excludes the leading count axis.
    pub fn new(example_shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if example_shape.is_empty() || example_shape.contains(&0) {
            return Err(Error::Data(format!(
                "example shape {example_shape:?} must be non-empty with positive extents"
            )));
        }
        let per: usize = example_shape.iter().product();
        if values.len() % per != 0 {
            return Err(Error::Data(format!(
                "{} values is not a whole number of {example_shape:?} examples",
                values.len()
            )));
        }
        let count = values.len() / per;
        if count < 2 {
            return Err(Error::Data(format!("dataset needs at least 2 examples, got {count}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value in example {} (flat index {pos})",
                pos / per
            )));
        }
        let fingerprint = fingerprint_tensor(count, &example_shape, &values);
        Ok(Self {
            example_shape,
            values,
            count,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.example_shape
    }

    pub fn example_len(&self) -> usize {
        self.example_shape.iter().product()
    }

    /// Full shape including the example axis.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.count];
        s.extend(&self.example_shape);
        s
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let per = self.example_len();
        &self.values[i * per..(i + 1) * per]
    }

    /// SHA-256 over the little-endian shape and payload, hex encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Elementwise map producing a new dataset of the same shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.example_shape.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Number of channels: size of the first example axis.
    pub fn channels(&self) -> usize {
        self.example_shape[0]
    }
}

fn fingerprint_tensor(count: usize, shape: &[usize], values: &[f32]) -> String {
    let mut h = Sha256::new();
    h.update(b"rndt-dataset");
    h.update((shape.len() as u32 + 1).to_le_bytes());
    h.update((count as u64).to_le_bytes());
    for &d in shape {
        h.update((d as u64).to_le_bytes());
    }
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose std fell below the guard and were only shifted.
    pub degenerate: Vec<bool>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Either kind of dataset the pipeline accepts.
#[derive(Debug, Clone)]
pub enum Dataset {
    Tensor(TensorDataset),
    Tokens(TokenDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Tensor(d) => d.len(),
            Dataset::Tokens(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fingerprint(&self) -> &str {
        match self {
            Dataset::Tensor(d) => d.fingerprint(),
            Dataset::Tokens(d) => d.fingerprint(),
        }
    }
}

impl From<TensorDataset> for Dataset {
    fn from(d: TensorDataset) -> Self {
        Dataset::Tensor(d)
    }
}

impl From<TokenDataset> for Dataset {
    fn from(d: TokenDataset) -> Self {
        Dataset::Tokens(d)
    }
}
