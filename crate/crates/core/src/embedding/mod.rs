//! Sentence embeddings for gradient reasons, cosine similarity, and k-means.

mod kmeans;

pub use kmeans::{kmeans, ClusterAssignment, DEFAULT_MAX_ITER};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hash::{text_hash, ContentHash};
use crate::math;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_text_hash: u64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source_text_hash: u64) -> Self {
        Self {
            values,
            source_text_hash,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.values)
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// A sentence encoder. Implementations return raw vectors; use
/// [`embed_batch`] to get validated [`EmbeddingVector`]s.
pub trait Encoder {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Encoder + ?Sized> Encoder for &T {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        (**self).encode(texts)
    }
}

/// Encode `texts`, checking that the encoder returned one finite, nonzero
/// vector of its declared dimension per text.
pub fn embed_batch<E: Encoder + ?Sized>(encoder: &E, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(invalid("embed_batch needs at least one text"));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(invalid(format!("text {i} is empty")));
    }
    let raw = encoder.encode(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::Protocol(format!(
            "encoder returned {} vectors for {} texts",
            raw.len(),
            texts.len()
        )));
    }
    let d = encoder.dimension();
    raw.into_iter()
        .zip(texts)
        .enumerate()
        .map(|(i, (values, text))| {
            if values.len() != d {
                return Err(Error::Protocol(format!(
                    "vector {i} has dimension {}, expected {d}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Protocol(format!("vector {i} is not finite")));
            }
            if math::norm_sq(&values) == 0.0 {
                return Err(Error::Protocol(format!("vector {i} is zero")));
            }
            Ok(EmbeddingVector::new(values, text_hash(text)))
        })
        .collect()
}

/// Cosine similarity of two raw vectors, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", u.len(), v.len())));
    }
    let nu = math::norm_sq(u);
    let nv = math::norm_sq(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(invalid("cosine similarity of a zero vector"));
    }
    // sqrt of the product keeps sim(u, u) exactly 1.
    Ok((math::dot(u, v) / math::sqrt(nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    cosine(&u.values, &v.values)
}

/// Scale to unit L2 norm.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = math::norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(invalid("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Deterministic offline encoder: lowercase character trigram counts pushed
/// through a seeded random ±1 projection.
///
/// Each text is encoded independently, so batch boundaries never change the
/// result.
#[derive(Clone, Debug)]
pub struct MockEncoder {
    id: String,
    seed: u64,
    dimension: usize,
}

impl MockEncoder {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self::with_dimension(seed, Self::DEFAULT_DIMENSION)
    }

    pub fn with_dimension(seed: u64, dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            id: format!("mock-encoder:{seed}:{dimension}"),
            seed,
            dimension,
        }
    }

    fn encode_one(&self, text: &str) -> Vec<f64> {
        let mut chars: Vec<char> = vec![' '];
        chars.extend(text.chars().flat_map(char::to_lowercase));
        chars.push(' ');
        let mut out = vec![0.0; self.dimension];
        let seed = self.seed.to_le_bytes();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            for (chunk, slots) in out.chunks_mut(64).enumerate() {
                let chunk = (chunk as u64).to_le_bytes();
                let bits = ContentHash::of_fields([&seed[..], &chunk[..], &buf[..len]]).as_u64();
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot += if bits >> j & 1 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        out
    }
}

impl Encoder for MockEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}
