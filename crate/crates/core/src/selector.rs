//! Quality- and duration-aware reference selection.
//!
//! Each retrieved candidate gets a gate score
//! `q = min(a, b)` where `a` is its prompt similarity relative to the best
//! candidate and `b` its dissimilarity to a fixed "low quality" embedding
//! relative to the best candidate; `q` is forced to zero unless the candidate
//! lasts between half and one and a half times the requested duration.
//! Survivors of `q >= threshold` are sampled with a softmax over prompt
//! similarity.

use alloc::vec::Vec;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::index::PyramidDescriptor;
use crate::types::EntryId;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    /// Candidates retrieved per request.
    pub top_k: usize,
    /// Softmax temperature over prompt similarity.
    pub temperature: f64,
    pub quality_threshold: f64,
    /// Embedding of the fixed negative prompt.
    pub negative: EmbeddingVector,
}

impl SelectorConfig {
    pub fn new(negative: EmbeddingVector) -> Self {
        Self {
            top_k: 8,
            temperature: 0.05,
            quality_threshold: 0.6,
            negative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("selector top_k must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("selector temperature must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.quality_threshold) {
            return Err(Error::InvalidConfig("quality threshold must be in [0, 1]"));
        }
        Ok(())
    }
}

/// A retrieved candidate before gating.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entry: EntryId,
    pub segment: PyramidDescriptor,
    /// Similarity of the candidate to the prompt.
    pub s_pos: f64,
    /// Similarity of the candidate to the negative embedding.
    pub s_neg: f64,
    /// Candidate duration in seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub entry: EntryId,
    pub segment: PyramidDescriptor,
    /// Prompt similarity clamped to `[0, 1]`.
    pub s_pos: f64,
    /// Negative similarity clamped to `[0, 1]`.
    pub s_neg: f64,
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub duration: f64,
}

/// Inclusive duration window `[0.5 L, 1.5 L]`.
pub fn duration_compatible(duration: f64, requested: f64) -> bool {
    duration >= 0.5 * requested && duration <= 1.5 * requested
}

/// Computes `a`, `b` and `q` for every candidate. Normalization runs over the
/// whole candidate set, including candidates the duration window rejects.
/// Returns an empty list when no candidate has positive prompt similarity.
pub fn score_candidates(candidates: &[Candidate], requested: f64) -> Vec<CandidateScore> {
    let clamp = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    let max_pos = candidates.iter().map(|c| clamp(c.s_pos)).fold(0.0, f64::max);
    if max_pos <= 0.0 {
        return Vec::new();
    }
    let max_dissim = candidates
        .iter()
        .map(|c| 1.0 - clamp(c.s_neg))
        .fold(0.0, f64::max);
    candidates
        .iter()
        .map(|c| {
            let s_pos = clamp(c.s_pos);
            let s_neg = clamp(c.s_neg);
            let a = s_pos / max_pos;
            let b = if max_dissim > 0.0 {
                (1.0 - s_neg) / max_dissim
            } else {
                0.0
            };
            let q = if duration_compatible(c.duration, requested) {
                a.min(b)
            } else {
                0.0
            };
            CandidateScore {
                entry: c.entry,
                segment: c.segment,
                s_pos,
                s_neg,
                a,
                b,
                q,
                duration: c.duration,
            }
        })
        .collect()
}

/// Selection probability of each gate survivor, in input order.
pub fn selection_probabilities(scored: &[CandidateScore], cfg: &SelectorConfig) -> Vec<(EntryId, f64)> {
    let survivors: Vec<&CandidateScore> = scored
        .iter()
        .filter(|c| c.q >= cfg.quality_threshold)
        .collect();
    let Some(top) = survivors.iter().map(|c| c.s_pos).reduce(f64::max) else {
        return Vec::new();
    };
    let weights: Vec<f64> = survivors
        .iter()
        .map(|c| ((c.s_pos - top) / cfg.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    survivors
        .iter()
        .zip(weights)
        .map(|(c, w)| (c.entry, w / total))
        .collect()
}

/// Samples one gate survivor with probability proportional to
/// `exp(s_pos / temperature)`. `None` means no candidate passed the gate.
pub fn select<R: Rng + ?Sized>(
    scored: &[CandidateScore],
    cfg: &SelectorConfig,
    rng: &mut R,
) -> Option<CandidateScore> {
    let probs = selection_probabilities(scored, cfg);
    if probs.is_empty() {
        return None;
    }
    let mut u: f64 = rng.random();
    let mut chosen = probs[probs.len() - 1].0;
    for &(entry, p) in &probs {
        if u < p {
            chosen = entry;
            break;
        }
        u -= p;
    }
    scored.iter().find(|c| c.entry == chosen).cloned()
}
