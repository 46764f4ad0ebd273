//! Request, clip and outcome value types shared by every stage.

use alloc::vec::Vec;
use core::fmt;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

pub const DEFAULT_TOTAL_STEPS: u32 = 200;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub id: u64,
    pub prompt: EmbeddingVector,
    /// Requested duration `L` in seconds.
    pub duration: f64,
    /// Total denoising steps `T`.
    pub total_steps: u32,
    /// Seconds since the start of the trace.
    pub arrival_time: f64,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidConfig("request duration must be positive"));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be at least 1"));
        }
        if !self.arrival_time.is_finite() {
            return Err(Error::NonFinite("arrival_time"));
        }
        Ok(())
    }
}

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(duration: f64, sample_rate: u32) -> Self {
        Self::new(
            alloc::vec![0.0; sample_count(duration, sample_rate)],
            sample_rate,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Copies `[start, start + length)` seconds, clamped to the clip.
    pub fn slice_seconds(&self, start: f64, length: f64) -> AudioClip {
        let sr = f64::from(self.sample_rate);
        let a = ((start * sr).round() as usize).min(self.samples.len());
        let b = (((start + length) * sr).round() as usize).min(self.samples.len());
        AudioClip::new(self.samples[a..b.max(a)].to_vec(), self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
        (e / self.samples.len() as f64).sqrt()
    }
}

/// `round(duration * sample_rate)`.
pub fn sample_count(duration: f64, sample_rate: u32) -> usize {
    (duration * f64::from(sample_rate)).round().max(0.0) as usize
}

/// Per-request record; the unit every metric is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ServeOutcome {
    pub request_id: u64,
    pub cache_hit: bool,
    pub entry: Option<EntryId>,
    pub arm: usize,
    pub skip_fraction: f64,
    /// `S_t = round(skip_fraction * T)`.
    pub steps_skipped: u32,
    pub total_steps: u32,
    pub quality: f64,
    /// Denoising steps actually run, `T - S_t`.
    pub nfe: u32,
    /// Modeled generation time in seconds.
    pub service_time: f64,
    pub queue_delay: f64,
    /// Measured selector + gater time; zero when no clock is attached.
    pub wall_overhead: f64,
    /// Set when a stage failed and the request degraded to a cold start.
    pub fallback: Option<&'static str>,
}

impl ServeOutcome {
    pub fn latency(&self) -> f64 {
        self.queue_delay + self.service_time
    }
}
