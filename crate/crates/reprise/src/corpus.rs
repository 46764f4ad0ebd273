//! The `wav-corpus` backend: seeds the cache with real audio files.
//!
//! Each file becomes one cache entry whose payload is the audio itself.
//! Its embedding is a fixed random projection of log band energies (mean and
//! spread over time in 32 log-spaced bands), so acoustically similar files
//! land near each other. Generation stays simulated.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reprise_core::cache::CacheStore;
use reprise_core::rng::derive;
use reprise_core::simgen::{Provenance, QualityModel, SimClip};
use reprise_core::vocoder::{stft, StftConfig};
use reprise_core::{normalize, AudioClip, EmbeddingVector};

pub const BANDS: usize = 32;
const LOW_HZ: f64 = 50.0;
const PROJECTION_SALT: u64 = 0xc0_4905;

/// Mean and standard deviation over frames of log energy per band.
pub fn band_features(clip: &AudioClip) -> Result<Vec<f64>> {
    let cfg = StftConfig::for_rate(clip.sample_rate);
    let spec = stft(clip, &cfg)?;
    let nyquist = f64::from(clip.sample_rate) / 2.0;
    let edges: Vec<f64> = (0..=BANDS)
        .map(|b| LOW_HZ * (nyquist / LOW_HZ).powf(b as f64 / BANDS as f64))
        .collect();
    let band_of = |k: usize| -> Option<usize> {
        let f = spec.bin_frequency(k);
        if f < LOW_HZ {
            return None;
        }
        Some(edges[1..].iter().position(|&e| f <= e).unwrap_or(BANDS - 1))
    };
    let bins: Vec<Option<usize>> = (0..cfg.bins()).map(band_of).collect();
    let mut sum = vec![0.0; BANDS];
    let mut sum_sq = vec![0.0; BANDS];
    for frame in &spec.frames {
        let mut energy = vec![0.0; BANDS];
        for (c, b) in frame.iter().zip(&bins) {
            if let Some(b) = b {
                energy[*b] += c.norm_sqr();
            }
        }
        for b in 0..BANDS {
            let l = (energy[b] + 1e-10).ln();
            sum[b] += l;
            sum_sq[b] += l * l;
        }
    }
    let n = spec.frames.len().max(1) as f64;
    let mut out = Vec::with_capacity(2 * BANDS);
    for b in 0..BANDS {
        out.push(sum[b] / n);
    }
    for b in 0..BANDS {
        let m = sum[b] / n;
        out.push((sum_sq[b] / n - m * m).max(0.0).sqrt());
    }
    Ok(out)
}

/// Seeded projection from band features to unit embeddings of `dim`.
#[derive(Debug, Clone)]
pub struct Projection {
    rows: Vec<EmbeddingVector>,
}

impl Projection {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = derive(seed, PROJECTION_SALT);
        Self {
            rows: (0..dim).map(|_| EmbeddingVector::random(2 * BANDS, &mut rng)).collect(),
        }
    }

    pub fn embed(&self, features: &[f64]) -> Result<EmbeddingVector> {
        let mean = features.iter().sum::<f64>() / features.len() as f64;
        let centered: Vec<f64> = features.iter().map(|x| x - mean).collect();
        let raw: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.values().iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect();
        Ok(normalize(&raw)?)
    }
}

pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Admits every WAV file in `dir` (sorted by name) at time zero. Returns the
/// number of files admitted.
pub fn seed_cache(store: &mut CacheStore, dir: &Path, dim: usize, seed: u64) -> Result<usize> {
    let files = list_wavs(dir)?;
    if files.is_empty() {
        bail!("no .wav files in {}", dir.display());
    }
    let projection = Projection::new(dim, seed);
    let quality = QualityModel::default().q_max;
    let mut admitted = 0;
    for (i, path) in files.iter().enumerate() {
        let audio = crate::wav::read(path)?;
        if audio.is_empty() {
            log::warn!("skipping empty file {}", path.display());
            continue;
        }
        let embedding = projection
            .embed(&band_features(&audio)?)
            .with_context(|| format!("embedding {}", path.display()))?;
        let clip = SimClip {
            duration: audio.duration(),
            latent: audio,
            embedding: embedding.clone(),
            provenance: Provenance {
                prompt: embedding.clone(),
                skip_fraction: 0.0,
                seed: i as u64,
            },
        };
        if store.admit(clip, embedding, quality, 0.0)?.entry.is_some() {
            admitted += 1;
        }
    }
    Ok(admitted)
}
