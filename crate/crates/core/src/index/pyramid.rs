//! Multi-scale segment descriptors for a cached clip.
//!
//! Level 0 is the whole clip; level `l` tiles it into `2^l` equal segments.
//! Only embeddings are materialized per segment; the audio payload stays a
//! single full-resolution copy owned by the cache entry.

use alloc::vec::Vec;

use crate::embedding::EmbeddingVector;
use crate::error::Result;
use crate::rng::{derive, mix};
use crate::types::EntryId;

/// Default minimum segment length as a fraction of the clip.
pub const DEFAULT_MIN_GRANULARITY: f64 = 0.25;
/// Hard floor on the granularity, bounding pyramid depth at level 4.
pub const MIN_GRANULARITY_FLOOR: f64 = 1.0 / 16.0;
/// Norm of the seeded perturbation applied to simulated segment embeddings.
pub const SEGMENT_PERTURBATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidDescriptor {
    pub entry: EntryId,
    pub level: u8,
    /// Segment start in seconds.
    pub start: f32,
    /// Segment length in seconds.
    pub length: f32,
}

impl PyramidDescriptor {
    pub fn full(entry: EntryId, duration: f64) -> Self {
        Self {
            entry,
            level: 0,
            start: 0.0,
            length: duration as f32,
        }
    }
}

/// Deepest level whose segments are still at least `min_granularity` of the
/// clip: `floor(log2(1 / min_granularity))`, after clamping to `(1/16, 1]`.
pub fn max_level(min_granularity: f64) -> u8 {
    let delta = min_granularity.clamp(MIN_GRANULARITY_FLOOR, 1.0);
    let mut level = 0u8;
    // Exact for power-of-two fractions; the epsilon absorbs rounding in
    // user-supplied values such as 0.333.
    while 1.0 / f64::from(1u32 << (level + 1)) >= delta - 1e-12 {
        level += 1;
    }
    level
}

/// Descriptors for levels `0..=max_level(min_granularity)`, level by level,
/// left to right. Produces `2^(max_level + 1) - 1` descriptors.
pub fn pyramid_segments(entry: EntryId, duration: f64, min_granularity: f64) -> Vec<PyramidDescriptor> {
    let top = max_level(min_granularity);
    let mut out = Vec::with_capacity((1usize << (top + 1)) - 1);
    for level in 0..=top {
        let tiles = 1u32 << level;
        let length = duration / f64::from(tiles);
        for i in 0..tiles {
            out.push(PyramidDescriptor {
                entry,
                level,
                start: (length * f64::from(i)) as f32,
                length: length as f32,
            });
        }
    }
    out
}

/// Simulated segment embeddings: the full-clip embedding for level 0 and a
/// seeded perturbation of norm [`SEGMENT_PERTURBATION`] for deeper levels.
pub fn simulated_segment_embeddings(
    full: &EmbeddingVector,
    segments: &[PyramidDescriptor],
    seed: u64,
) -> Result<Vec<EmbeddingVector>> {
    segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            if seg.level == 0 {
                return Ok(full.clone());
            }
            let salt = mix(seg.entry.0) ^ ((i as u64) << 8 | u64::from(seg.level));
            let mut rng = derive(seed, salt);
            let dir = EmbeddingVector::random(full.dim(), &mut rng);
            full.blend(dir.values(), SEGMENT_PERTURBATION)
        })
        .collect()
}
