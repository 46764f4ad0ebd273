//! Warm-start caching for iterative-denoising generators.
//!
//! A request's prompt embedding is matched against a cache of earlier outputs
//! ([`index`]), the best candidates are gated on quality and duration and one is
//! sampled ([`selector`]), time-stretched to the requested length ([`vocoder`]),
//! and a contextual bandit ([`gater`]) decides how many denoising steps the
//! generator may skip when it starts from a noised copy of that reference.
//! [`cache`] keeps the pool useful through decayed importance accounting,
//! eviction and best-of-three refinement. [`simgen`] is a deterministic stand-in
//! generator so every decision can be checked against a known ground truth, and
//! [`pipeline`] wires the stages together.
//!
//! The crate is `no_std` (with `alloc`); file formats, sockets and the CLI live
//! in the `reprise` companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod cache;
pub mod embedding;
pub mod error;
pub mod gater;
pub mod index;
pub mod pipeline;
pub mod rng;
pub mod selector;
pub mod simgen;
pub mod types;
pub mod vocoder;

pub use embedding::{cosine_similarity, normalize, EmbeddingVector};
pub use error::{Error, Result};
pub use types::{AudioClip, EntryId, GenerationRequest, ServeOutcome};
