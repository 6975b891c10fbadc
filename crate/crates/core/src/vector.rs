//! Unit-normalized embedding vectors and the cosine arithmetic over them.

use crate::error::{Error, Result};

/// A finite, unit-length feature vector.
///
/// Construction normalizes the input, so cosine similarity between two
/// embeddings is their dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Validates and L2-normalizes `values`.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidVector("zero-length vector".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!(
                "non-finite component at {pos}"
            )));
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidVector("zero or overflowing norm".into()));
        }
        let normalized = values
            .into_iter()
            .map(|v| (f64::from(v) / norm) as f32)
            .collect();
        Ok(Self(normalized))
    }

    /// Wraps values that are already unit-normalized (snapshots, internal copies).
    pub(crate) fn from_normalized(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn cosine_similarity(&self, other: &Self) -> f32 {
        1.0 - self.cosine_distance(other)
    }

    pub fn cosine_distance(&self, other: &Self) -> f32 {
        cosine_distance(&self.0, &other.0)
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f32 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// Distances below this are under the resolution of an f32 dot product and
/// are reported as exactly 0, so copies of a vector always coincide.
pub const DISTANCE_RESOLUTION: f32 = 1e-5;

/// `1 - dot(a, b)` for unit vectors, clamped to `[0, 2]`.
#[inline]
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f32 {
    let d = (1.0 - dot(a, b)).clamp(0.0, 2.0);
    if d < DISTANCE_RESOLUTION {
        0.0
    } else {
        d
    }
}

/// Euclidean distance between two unit vectors expressed through their cosine
/// distance: `||a - b|| = sqrt(2 * cosine_distance)`.
pub fn chord_length(cosine_distance: f64) -> f64 {
    (2.0 * cosine_distance.max(0.0)).sqrt()
}
