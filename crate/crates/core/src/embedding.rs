//! Unit-norm embedding vectors and the cosine similarity used as the
//! text/audio alignment score throughout the pipeline.

use alloc::vec::Vec;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 64;

/// Tolerance on the stored Euclidean norm.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-normalized real vector.
///
/// Construction always goes through [`normalize`] (or the checked
/// [`EmbeddingVector::from_unit`]), so every stored value satisfies
/// `|norm - 1| <= 1e-6`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wraps values that are already unit length, rejecting anything else.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() {
            return Err(Error::NonFinite("embedding"));
        }
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return normalize(&values);
        }
        Ok(Self { values })
    }

    /// Draws a direction uniformly from the unit sphere.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(v) = normalize(&raw) {
                return v;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        dot(&self.values, &other.values)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&x| x as f32).collect()
    }

    pub fn neg(&self) -> Self {
        Self {
            values: self.values.iter().map(|x| -x).collect(),
        }
    }

    /// `normalize(self + scale * direction)`; used for blends and perturbations.
    pub fn blend(&self, direction: &[f64], scale: f64) -> Result<Self> {
        if direction.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: direction.len(),
            });
        }
        let raw: Vec<f64> = self
            .values
            .iter()
            .zip(direction)
            .map(|(a, b)| a + scale * b)
            .collect();
        normalize(&raw)
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Scales `raw` to unit length. Zero (or non-finite) input is rejected.
pub fn normalize(raw: &[f64]) -> Result<EmbeddingVector> {
    let norm = l2_norm(raw);
    if !norm.is_finite() {
        return Err(Error::NonFinite("embedding"));
    }
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector {
        values: raw.iter().map(|x| x / norm).collect(),
    })
}

/// Cosine similarity of two stored embeddings, clamped to `[-1, 1]`.
///
/// Both operands are unit length, so this is the plain dot product.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok(a.dot(b)?.clamp(-1.0, 1.0))
}
