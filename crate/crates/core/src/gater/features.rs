use alloc::vec::Vec;

use crate::embedding::{cosine_similarity, EmbeddingVector};
use crate::error::Result;
use crate::types::DEFAULT_TOTAL_STEPS;

pub const POOLED_DIM: usize = 8;
/// `[cos, pooled product (8), T / 200, 1]`.
pub const FEATURE_DIM: usize = POOLED_DIM + 3;

/// Context vector for a prompt/reference pair: their cosine similarity, the
/// elementwise product sum-pooled into eight contiguous chunks, the step
/// budget relative to 200, and a bias term.
pub fn context_features(
    prompt: &EmbeddingVector,
    reference: &EmbeddingVector,
    total_steps: u32,
) -> Result<Vec<f64>> {
    let cos = cosine_similarity(prompt, reference)?;
    let d = prompt.dim();
    let mut pooled = [0.0f64; POOLED_DIM];
    for (j, (a, b)) in prompt.values().iter().zip(reference.values()).enumerate() {
        pooled[j * POOLED_DIM / d] += a * b;
    }
    let mut phi = Vec::with_capacity(FEATURE_DIM);
    phi.push(cos);
    phi.extend_from_slice(&pooled);
    phi.push(f64::from(total_steps) / f64::from(DEFAULT_TOTAL_STEPS));
    phi.push(1.0);
    Ok(phi)
}
