//! Deterministic stand-in for the diffusion backend.
//!
//! A generated clip is an embedding plus a low-rate latent signal derived
//! from it. Warm-starting from a reference skips `round(s * T)` of the `T`
//! denoising steps; the resulting quality follows a fixed rule in which more
//! similar references tolerate larger skips:
//!
//! ```text
//! Q(s, sigma) = clamp(q_max - c * max(0, s - 0.75 * max(0, sigma))^2, 0, 1) + noise
//! ```
//!
//! The constants are fabricated for testability; nothing here models real
//! diffusion dynamics.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp, Normal, StandardNormal};

use crate::embedding::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};
use crate::gater::{context_features, reward, steps_skipped, ArmSet, TrainingRecord, ALPHA};
use crate::rng::{derive, mix, seeded};
use crate::types::{sample_count, AudioClip, GenerationRequest, DEFAULT_TOTAL_STEPS};
use crate::vocoder::StftConfig;

/// Sample rate of simulated latents.
pub const LATENT_RATE: u32 = 100;

/// Phase-vocoder settings used on simulated latents.
pub const LATENT_STFT: StftConfig = StftConfig { window: 32, hop: 8 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityModel {
    pub q_max: f64,
    /// Penalty slope `c`.
    pub slope: f64,
    /// Penalty-free skip per unit of similarity.
    pub tolerance: f64,
    /// Standard deviation of the observation noise.
    pub noise: f64,
}

impl Default for QualityModel {
    fn default() -> Self {
        Self {
            q_max: 0.95,
            slope: 2.0,
            tolerance: 0.75,
            noise: 0.02,
        }
    }
}

impl QualityModel {
    /// Largest skip with no quality penalty at similarity `sigma`.
    pub fn penalty_free_skip(&self, sigma: f64) -> f64 {
        self.tolerance * sigma.max(0.0)
    }

    /// Noise-free quality of a warm start.
    pub fn expected(&self, skip: f64, sigma: f64) -> f64 {
        let excess = (skip - self.penalty_free_skip(sigma)).max(0.0);
        (self.q_max - self.slope * excess * excess).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, skip: f64, sigma: f64, rng: &mut R) -> f64 {
        (self.expected(skip, sigma) + self.draw_noise(rng)).clamp(0.0, 1.0)
    }

    /// Quality of a cold (full-length) generation: `q_max - |noise|`.
    pub fn cold<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.q_max - self.draw_noise(rng).abs()).clamp(0.0, 1.0)
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.noise > 0.0 {
            Normal::new(0.0, self.noise).map_or(0.0, |d| rng.sample(d))
        } else {
            0.0
        }
    }
}

/// Index of the arm maximizing `alpha * s + (1 - alpha) * E[Q(s, sigma)]`,
/// by exhaustive evaluation. Ties go to the larger skip.
pub fn oracle_optimal_arm(sigma: f64, model: &QualityModel, arms: &ArmSet, alpha: f64) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (arm, &s) in arms.fractions().iter().enumerate() {
        let v = reward(s, model.expected(s, sigma), alpha);
        if v >= best_value {
            best = arm;
            best_value = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub prompt: EmbeddingVector,
    pub skip_fraction: f64,
    pub seed: u64,
}

/// A simulated output: embedding, duration and latent payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SimClip {
    pub latent: AudioClip,
    pub embedding: EmbeddingVector,
    pub duration: f64,
    pub provenance: Provenance,
}

/// Eight low-frequency partials whose amplitudes and phases come from the
/// embedding; a stand-in for a decoded latent.
pub fn synthesize_latent(embedding: &EmbeddingVector, duration: f64) -> AudioClip {
    let n = sample_count(duration, LATENT_RATE);
    let v = embedding.values();
    let partials: Vec<(f64, f64, f64)> = (0..8)
        .map(|j| {
            let amp = v.get(j).copied().unwrap_or(0.0);
            let phase = v.get(j + 8).copied().unwrap_or(0.0) * PI;
            (1.0 + 4.0 * j as f64, amp, phase)
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1.abs()).sum::<f64>().max(1e-9);
    let mut phasors: Vec<(Complex64, Complex64, f64)> = partials
        .iter()
        .map(|&(f, a, ph)| {
            let step = 2.0 * PI * f / f64::from(LATENT_RATE);
            (Complex64::from_polar(1.0, ph), Complex64::from_polar(1.0, step), a)
        })
        .collect();
    let samples = (0..n)
        .map(|_| {
            let mut x = 0.0;
            for (z, rot, a) in phasors.iter_mut() {
                x += *a * z.im;
                *z *= *rot;
            }
            (0.9 * x / norm) as f32
        })
        .collect();
    AudioClip::new(samples, LATENT_RATE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub clip: SimClip,
    pub quality: f64,
    pub steps_skipped: u32,
    /// Denoising steps run: `T - steps_skipped`.
    pub nfe: u32,
    /// Modeled seconds of generator time.
    pub service_time: f64,
    /// Similarity between prompt and reference; `None` for cold starts.
    pub reference_similarity: Option<f64>,
}

/// Warm-start input: an already duration-aligned reference and a skip.
#[derive(Debug, Clone, Copy)]
pub struct WarmStart<'a> {
    pub reference: &'a SimClip,
    pub skip_fraction: f64,
}

/// Anything that can produce an output for a prompt, optionally
/// warm-started. The cache manager's refinement and the pipeline use this.
pub trait Generator {
    fn generate(
        &self,
        prompt: &EmbeddingVector,
        duration: f64,
        total_steps: u32,
        warm: Option<WarmStart<'_>>,
        seed: u64,
    ) -> Result<Generation>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimGenerator {
    pub quality: QualityModel,
    pub arms: ArmSet,
    /// Milliseconds per denoising step per 10 s of audio.
    pub step_time_ms: f64,
    /// Weight of the reference in the output embedding per unit skip.
    pub reference_influence: f64,
}

impl Default for SimGenerator {
    fn default() -> Self {
        Self {
            quality: QualityModel::default(),
            arms: ArmSet::default(),
            step_time_ms: 4.0,
            reference_influence: 0.2,
        }
    }
}

impl SimGenerator {
    /// Modeled time for `steps` denoising steps on `duration` seconds.
    pub fn step_cost(&self, steps: u32, duration: f64) -> f64 {
        f64::from(steps) * self.step_time_ms / 1000.0 * duration / 10.0
    }
}

impl Generator for SimGenerator {
    fn generate(
        &self,
        prompt: &EmbeddingVector,
        duration: f64,
        total_steps: u32,
        warm: Option<WarmStart<'_>>,
        seed: u64,
    ) -> Result<Generation> {
        if !(duration > 0.0) || total_steps == 0 {
            return Err(Error::InvalidConfig("generation needs positive duration and steps"));
        }
        let mut rng = derive(seed, 0x51_6e);
        let (embedding, quality, skip, sigma) = match warm {
            None => (prompt.clone(), self.quality.cold(&mut rng), 0.0, None),
            Some(w) => {
                if self.arms.arm_of(w.skip_fraction).is_none() {
                    return Err(Error::UnknownSkip(w.skip_fraction));
                }
                let expected_len = sample_count(duration, w.reference.latent.sample_rate);
                if (w.reference.duration - duration).abs() > 1e-9 || w.reference.latent.len() != expected_len {
                    return Err(Error::DurationMismatch {
                        expected: duration,
                        actual: w.reference.duration,
                    });
                }
                let sigma = cosine_similarity(prompt, &w.reference.embedding)?;
                let q = if w.skip_fraction == 0.0 {
                    self.quality.cold(&mut rng)
                } else {
                    self.quality.sample(w.skip_fraction, sigma, &mut rng)
                };
                let weight = self.reference_influence * w.skip_fraction;
                let raw: Vec<f64> = prompt
                    .values()
                    .iter()
                    .zip(w.reference.embedding.values())
                    .map(|(p, r)| (1.0 - weight) * p + weight * r)
                    .collect();
                let embedding = crate::embedding::normalize(&raw).unwrap_or_else(|_| prompt.clone());
                (embedding, q, w.skip_fraction, Some(sigma))
            }
        };
        let skipped = steps_skipped(skip, total_steps);
        let nfe = total_steps - skipped;
        let latent = synthesize_latent(&embedding, duration);
        Ok(Generation {
            clip: SimClip {
                latent,
                embedding,
                duration,
                provenance: Provenance {
                    prompt: prompt.clone(),
                    skip_fraction: skip,
                    seed,
                },
            },
            quality,
            steps_skipped: skipped,
            nfe,
            service_time: self.step_cost(nfe, duration),
            reference_similarity: sigma,
        })
    }
}

/// Parameters of the synthetic request trace.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub requests: usize,
    pub clusters: usize,
    /// Fraction of prompts that are near-duplicates of an earlier prompt.
    pub near_duplicate_rate: f64,
    /// Perturbation norm around a cluster center for fresh prompts.
    pub cluster_spread: f64,
    /// Perturbation norm applied to a near-duplicate.
    pub duplicate_jitter: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    /// Mean arrivals per second (Poisson).
    pub arrival_rate: f64,
    pub total_steps: u32,
    pub dim: usize,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            requests: 2000,
            clusters: 32,
            near_duplicate_rate: 0.9,
            cluster_spread: 1.5,
            duplicate_jitter: 0.2,
            min_duration: 4.0,
            max_duration: 12.0,
            arrival_rate: 0.25,
            total_steps: DEFAULT_TOTAL_STEPS,
            dim: crate::embedding::DEFAULT_DIM,
            seed: 0,
        }
    }
}

/// Seeded cluster centers that fresh prompts are drawn around.
#[derive(Debug, Clone)]
pub struct PromptSpace {
    pub centers: Vec<EmbeddingVector>,
    pub spread: f64,
}

impl PromptSpace {
    pub fn new(clusters: usize, dim: usize, spread: f64, seed: u64) -> Self {
        let mut rng = derive(seed, 0xce_47e5);
        Self {
            centers: (0..clusters.max(1))
                .map(|_| EmbeddingVector::random(dim, &mut rng))
                .collect(),
            spread,
        }
    }

    pub fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    /// A fresh prompt: a random center perturbed by a random direction of
    /// norm `spread`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EmbeddingVector {
        let c = rng.random_range(0..self.centers.len());
        self.around(c, rng)
    }

    pub fn around<R: Rng + ?Sized>(&self, cluster: usize, rng: &mut R) -> EmbeddingVector {
        let dir = EmbeddingVector::random(self.dim(), rng);
        self.centers[cluster]
            .blend(dir.values(), self.spread)
            .unwrap_or_else(|_| self.centers[cluster].clone())
    }
}

/// Generates a request trace. Near-duplicates copy a uniformly chosen earlier
/// prompt and perturb it by `duplicate_jitter`; with zero jitter they are
/// exact copies.
pub fn synth_workload(cfg: &WorkloadConfig) -> Result<Vec<GenerationRequest>> {
    if !(0.0..=1.0).contains(&cfg.near_duplicate_rate) {
        return Err(Error::InvalidConfig("near_duplicate_rate must be in [0, 1]"));
    }
    if !(cfg.min_duration > 0.0 && cfg.max_duration >= cfg.min_duration) {
        return Err(Error::InvalidConfig("duration range must be positive and ordered"));
    }
    if !(cfg.arrival_rate > 0.0) {
        return Err(Error::InvalidConfig("arrival_rate must be positive"));
    }
    let space = PromptSpace::new(cfg.clusters, cfg.dim, cfg.cluster_spread, cfg.seed);
    let gaps = Exp::new(cfg.arrival_rate).map_err(|_| Error::InvalidConfig("arrival_rate"))?;
    let mut clock = 0.0f64;
    let mut out: Vec<GenerationRequest> = Vec::with_capacity(cfg.requests);
    for id in 0..cfg.requests as u64 {
        // Separate streams per request and per decision: traces that differ
        // only in near_duplicate_rate share durations, arrivals and fresh
        // prompts, and their duplicate sets are nested.
        let stream = |salt: u64| derive(cfg.seed, mix(id) ^ salt);
        let duplicate = !out.is_empty() && stream(0xd0_b1e).random::<f64>() < cfg.near_duplicate_rate;
        let prompt = if duplicate {
            let mut rng = stream(0x5_0bce);
            let source = &out[rng.random_range(0..out.len())].prompt;
            if cfg.duplicate_jitter > 0.0 {
                let dir = EmbeddingVector::random(cfg.dim, &mut rng);
                source.blend(dir.values(), cfg.duplicate_jitter)?
            } else {
                source.clone()
            }
        } else {
            space.sample(&mut stream(0xf7e5))
        };
        let duration = if cfg.max_duration > cfg.min_duration {
            stream(0xd07a).random_range(cfg.min_duration..cfg.max_duration)
        } else {
            cfg.min_duration
        };
        if id > 0 {
            clock += stream(0xa771).sample(gaps);
        }
        out.push(GenerationRequest {
            id,
            prompt,
            duration,
            total_steps: cfg.total_steps,
            arrival_time: clock,
        });
    }
    Ok(out)
}

/// A unit vector at exactly cosine `sigma` from `anchor`.
pub fn at_similarity<R: Rng + ?Sized>(anchor: &EmbeddingVector, sigma: f64, rng: &mut R) -> EmbeddingVector {
    loop {
        let raw: Vec<f64> = (0..anchor.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let along: f64 = raw.iter().zip(anchor.values()).map(|(a, b)| a * b).sum();
        let orth: Vec<f64> = raw
            .iter()
            .zip(anchor.values())
            .map(|(r, a)| r - along * a)
            .collect();
        let Ok(orth) = crate::embedding::normalize(&orth) else {
            continue;
        };
        let s = sigma.clamp(-1.0, 1.0);
        let c = (1.0 - s * s).max(0.0).sqrt();
        let combined: Vec<f64> = anchor
            .values()
            .iter()
            .zip(orth.values())
            .map(|(a, o)| s * a + c * o)
            .collect();
        if let Ok(v) = crate::embedding::normalize(&combined) {
            return v;
        }
    }
}

/// One prompt/reference context with its similarity.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub prompt: EmbeddingVector,
    pub reference: EmbeddingVector,
    pub sigma: f64,
    pub features: Vec<f64>,
}

/// Contexts with similarity uniform in `[lo, hi]`.
pub fn sample_contexts(n: usize, dim: usize, range: (f64, f64), seed: u64) -> Result<Vec<SimContext>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let prompt = EmbeddingVector::random(dim, &mut rng);
            let target = rng.random_range(range.0..=range.1);
            let reference = at_similarity(&prompt, target, &mut rng);
            let sigma = cosine_similarity(&prompt, &reference)?;
            let features = context_features(&prompt, &reference, DEFAULT_TOTAL_STEPS)?;
            Ok(SimContext {
                prompt,
                reference,
                sigma,
                features,
            })
        })
        .collect()
}

/// Counterfactual training records with similarities uniform in `[0, 1]`.
pub fn counterfactual_records(
    n: usize,
    dim: usize,
    quality: &QualityModel,
    arms: &ArmSet,
    seed: u64,
) -> Result<Vec<TrainingRecord>> {
    let contexts = sample_contexts(n, dim, (0.0, 1.0), seed)?;
    Ok(records_for_contexts(&contexts, quality, arms, seed))
}

/// Contexts as the cache would see them: each request of a synthetic trace
/// paired with its most similar earlier prompt. Returns `n` contexts from a
/// trace of `n + 1` requests.
pub fn workload_contexts(cfg: &WorkloadConfig, n: usize) -> Result<Vec<SimContext>> {
    let trace = synth_workload(&WorkloadConfig {
        requests: n + 1,
        ..cfg.clone()
    })?;
    (1..trace.len())
        .map(|i| {
            let prompt = &trace[i].prompt;
            let mut best = (0, f64::NEG_INFINITY);
            for (j, earlier) in trace[..i].iter().enumerate() {
                let s = prompt.dot(&earlier.prompt)?;
                if s > best.1 {
                    best = (j, s);
                }
            }
            let reference = trace[best.0].prompt.clone();
            Ok(SimContext {
                sigma: cosine_similarity(prompt, &reference)?,
                features: context_features(prompt, &reference, trace[i].total_steps)?,
                prompt: prompt.clone(),
                reference,
            })
        })
        .collect()
}

/// Training records with every arm evaluated counterfactually on the quality
/// model, for the given contexts.
pub fn records_for_contexts(
    contexts: &[SimContext],
    quality: &QualityModel,
    arms: &ArmSet,
    seed: u64,
) -> Vec<TrainingRecord> {
    let mut rng = derive(seed, 0x7ec0_7d5);
    contexts
        .iter()
        .enumerate()
        .map(|(p, ctx)| TrainingRecord {
            prompt: p as u64,
            quality: arms
                .fractions()
                .iter()
                .map(|&s| {
                    if s == 0.0 {
                        quality.cold(&mut rng)
                    } else {
                        quality.sample(s, ctx.sigma, &mut rng)
                    }
                })
                .collect(),
            efficiency: arms.fractions().to_vec(),
            features: ctx.features.clone(),
        })
        .collect()
}

/// Records used to train the serving gater: 5000 contexts from a default
/// synthetic workload.
pub fn default_training_records(seed: u64) -> Result<Vec<TrainingRecord>> {
    let contexts = workload_contexts(
        &WorkloadConfig {
            seed,
            ..WorkloadConfig::default()
        },
        5000,
    )?;
    Ok(records_for_contexts(
        &contexts,
        &QualityModel::default(),
        &ArmSet::default(),
        seed,
    ))
}

/// Arm maximizing the expected reward with alpha [`ALPHA`].
pub fn oracle_arm(sigma: f64) -> usize {
    oracle_optimal_arm(sigma, &QualityModel::default(), &ArmSet::default(), ALPHA)
}
