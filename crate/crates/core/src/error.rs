use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot normalize a zero-norm vector")]
    ZeroVector,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("stretch ratio {0} outside the supported range [0.4, 2.5]")]
    StretchRatio(f64),

    #[error("empty audio clip")]
    EmptyClip,

    #[error("warm-start reference lasts {actual}s but the request asks for {expected}s")]
    DurationMismatch { expected: f64, actual: f64 },

    #[error("skip fraction {0} is not one of the configured arms")]
    UnknownSkip(f64),

    #[error("training set is empty")]
    NoTrainingData,

    #[error("unknown cache entry {0}")]
    UnknownEntry(u64),
}
