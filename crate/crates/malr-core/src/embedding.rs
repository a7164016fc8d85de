//! Text embeddings for nearest-rule retrieval.
//!
//! The default embedder hashes character trigrams into a fixed-width count
//! vector. It is deterministic, needs no external service, and is good enough
//! to rank short rule texts by surface similarity. An HTTP-backed embedder
//! (see [`crate::http_backend::HttpEmbedder`]) can replace it when a provider
//! is available.

use crate::error::{Error, Result};

/// Fixed-width numeric vector. Length is the dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Hashed character-trigram counts projected onto `dim` buckets.
///
/// Texts shorter than three characters contribute a single gram covering the
/// whole text, so every non-empty input yields a non-zero vector.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl TrigramEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedder dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self {
            dim: Self::DEFAULT_DIM,
        }
    }
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> &str {
        "trigram"
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptyEmbeddingText);
        }
        let lowered = text.to_lowercase();
        let chars: Vec<char> = lowered.chars().collect();
        let mut values = vec![0.0_f64; self.dim];
        let mut bump = |gram: &str| {
            let bucket = (fnv1a64(gram.as_bytes()) % self.dim as u64) as usize;
            values[bucket] += 1.0;
        };
        if chars.len() < 3 {
            bump(&lowered);
        } else {
            for window in chars.windows(3) {
                bump(&window.iter().collect::<String>());
            }
        }
        Ok(EmbeddingVector::new(values))
    }
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let mut dot = 0.0;
    let mut norm_u = 0.0;
    let mut norm_v = 0.0;
    for (a, b) in u.values.iter().zip(&v.values) {
        dot += a * b;
        norm_u += a * a;
        norm_v += b * b;
    }
    if norm_u == 0.0 || norm_v == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (norm_u.sqrt() * norm_v.sqrt()))
}

/// FNV-1a, 64-bit. Also used for content-derived record ids elsewhere in the
/// crate, so the constants must never change.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in bytes {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
