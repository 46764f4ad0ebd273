//! Request execution: retrieval, reference selection, duration alignment,
//! skip gating, warm-started generation and cache upkeep.
//!
//! Cache mutations produced while serving are queued and applied between
//! requests, so the serving path only reads the cache.

mod replay;

use alloc::boxed::Box;
use alloc::vec::Vec;

pub use replay::{replay, ReplayOptions, RunReport, RunSummary};

use crate::cache::{CacheConfig, CacheStore, RefinementTask};
use crate::embedding::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};
use crate::gater::{context_features, steps_skipped, ArmSet, BanditModel, Mode, QualityTarget, TrainOptions};
use crate::index::{IndexParams, PyramidDescriptor};
use crate::rng::{derive, mix};
use crate::selector::{score_candidates, select, Candidate, SelectorConfig};
use crate::simgen::{Generation, Generator, SimClip, WarmStart, LATENT_RATE, LATENT_STFT};
use crate::types::{EntryId, GenerationRequest, ServeOutcome};
use crate::vocoder::{time_stretch, StftConfig};

/// How a reference is found in the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retrieval {
    /// Pyramid segments, quality gate and softmax sampling.
    Selector,
    /// Plain nearest neighbor on full-clip embeddings.
    Nearest,
    /// No cache at all.
    Disabled,
}

/// How the skip fraction is chosen once a reference is found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkipPolicy {
    Gater(Mode),
    /// Skip `skip` when similarity reaches `threshold`, otherwise none.
    Threshold { threshold: f64, skip: f64 },
    /// Same skip on every hit.
    Fixed(f64),
}

/// The named configurations compared by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoRetrievalSelection,
    NoSkipGater,
    RuleSkip,
    NoCache,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoRetrievalSelection,
        Variant::NoSkipGater,
        Variant::RuleSkip,
        Variant::NoCache,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRetrievalSelection => "no-rs",
            Variant::NoSkipGater => "no-sg",
            Variant::RuleSkip => "rule-skip",
            Variant::NoCache => "no-cache",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn retrieval(self) -> Retrieval {
        match self {
            Variant::NoRetrievalSelection => Retrieval::Nearest,
            Variant::NoCache => Retrieval::Disabled,
            _ => Retrieval::Selector,
        }
    }

    pub fn policy(self, mode: Mode) -> SkipPolicy {
        match self {
            Variant::NoSkipGater | Variant::RuleSkip => RULE_SKIP,
            _ => SkipPolicy::Gater(mode),
        }
    }
}

/// Skip 55% of the steps when similarity is at least 0.35.
pub const RULE_SKIP: SkipPolicy = SkipPolicy::Threshold {
    threshold: 0.35,
    skip: 0.55,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub selector: SelectorConfig,
    pub cache: CacheConfig,
    pub index: IndexParams,
    pub retrieval: Retrieval,
    pub policy: SkipPolicy,
    /// Phase-vocoder settings for simulated latents; payloads at other
    /// sample rates use [`StftConfig::for_rate`].
    pub stft: StftConfig,
    /// Run refinement attempts while the server is idle.
    pub refine_when_idle: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = derive(seed, 0x6e_e6);
        Self {
            selector: SelectorConfig::new(EmbeddingVector::random(dim, &mut rng)),
            cache: CacheConfig::default(),
            index: IndexParams {
                seed,
                ..IndexParams::default()
            },
            retrieval: Retrieval::Selector,
            policy: SkipPolicy::Gater(Mode::Exploit),
            stft: LATENT_STFT,
            refine_when_idle: true,
            seed,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        let mode = match self.policy {
            SkipPolicy::Gater(m) => m,
            _ => Mode::Exploit,
        };
        self.retrieval = variant.retrieval();
        self.policy = variant.policy(mode);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.selector.validate()?;
        self.cache.validate()?;
        self.index.validate()?;
        self.stft.validate()?;
        match self.policy {
            SkipPolicy::Threshold { skip, .. } | SkipPolicy::Fixed(skip) if !(0.0..1.0).contains(&skip) => {
                Err(Error::InvalidConfig("policy skip must be in [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// Trains the default gater on simulated counterfactual records.
pub fn default_gater(seed: u64) -> Result<BanditModel> {
    let records = crate::simgen::default_training_records(mix(seed ^ 0x6a7e_7ec))?;
    let mut model = BanditModel::new(ArmSet::default());
    let mut rng = derive(seed, 0x6a7e);
    crate::gater::train_offline(
        &mut model,
        &records,
        &TrainOptions {
            epochs: 10,
            target: QualityTarget::Rank,
        },
        &mut rng,
    )?;
    Ok(model)
}

/// Wall-clock source for overhead measurement, in seconds.
pub trait Stopwatch {
    fn now(&self) -> f64;
}

/// A clock that never advances; overheads read as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Stopwatch for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Cache mutation produced by the serving path.
#[derive(Debug, Clone, PartialEq)]
pub enum CacheEvent {
    Reuse {
        entry: EntryId,
        steps_skipped: u32,
        duration: f64,
        skip_fraction: f64,
        /// Seconds.
        time: f64,
    },
    Admit {
        clip: SimClip,
        prompt: EmbeddingVector,
        quality: f64,
        /// Seconds.
        time: f64,
    },
}

/// Cache changes made by one [`Pipeline::flush`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlushReport {
    pub admitted: Vec<EntryId>,
    pub evicted: Vec<EntryId>,
}

/// The reference chosen for a request, already aligned to its duration.
#[derive(Debug, Clone)]
pub struct Reference {
    pub entry: EntryId,
    pub segment: PyramidDescriptor,
    pub clip: SimClip,
    pub similarity: f64,
}

/// Decision made for a request before generation.
#[derive(Debug, Clone)]
pub struct Plan {
    pub reference: Option<Reference>,
    pub arm: usize,
    pub skip_fraction: f64,
    pub fallback: Option<&'static str>,
}

pub struct Pipeline<G: Generator> {
    config: PipelineConfig,
    store: CacheStore,
    gater: BanditModel,
    generator: G,
    clock: Box<dyn Stopwatch + Send>,
    pending: Vec<CacheEvent>,
    refinements: Vec<RefinementTask>,
}

pub(crate) fn seconds_to_hours(t: f64) -> f64 {
    t / 3600.0
}

impl<G: Generator> Pipeline<G> {
    pub fn new(config: PipelineConfig, gater: BanditModel, generator: G) -> Result<Self> {
        config.validate()?;
        let store = CacheStore::new(config.cache.clone(), config.selector.negative.dim(), config.index.clone())?;
        Ok(Self {
            config,
            store,
            gater,
            generator,
            clock: Box::new(NoClock),
            pending: Vec::new(),
            refinements: Vec::new(),
        })
    }

    pub fn with_clock(mut self, clock: Box<dyn Stopwatch + Send>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut CacheStore {
        &mut self.store
    }

    /// Swaps in a cache, e.g. one loaded from a snapshot.
    pub fn set_store(&mut self, store: CacheStore) -> Result<()> {
        if store.index().dim() != self.store.index().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.store.index().dim(),
                actual: store.index().dim(),
            });
        }
        self.store = store;
        Ok(())
    }

    pub fn gater(&self) -> &BanditModel {
        &self.gater
    }

    pub fn generator(&self) -> &G {
        &self.generator
    }

    pub fn pending(&self) -> &[CacheEvent] {
        &self.pending
    }

    pub fn refinements(&self) -> &[RefinementTask] {
        &self.refinements
    }

    fn request_seed(&self, req: &GenerationRequest) -> u64 {
        mix(self.config.seed ^ mix(req.id.wrapping_add(0x5eed)))
    }

    /// Best duration-compatible segment of an entry for `prompt`; falls back
    /// to `hint` when no segment fits.
    fn best_segment(&self, entry: EntryId, prompt: &EmbeddingVector, duration: f64, hint: PyramidDescriptor) -> Option<(PyramidDescriptor, f64, f64)> {
        let e = self.store.get(entry)?;
        let neg = &self.config.selector.negative;
        let mut best: Option<(PyramidDescriptor, f64, f64)> = None;
        for (seg, emb) in e.segments.iter().zip(&e.segment_embeddings) {
            let len = f64::from(seg.length);
            let fits = crate::selector::duration_compatible(len, duration);
            let sim = cosine_similarity(prompt, emb).ok()?;
            if fits && best.is_none_or(|b| sim > b.1) {
                best = Some((*seg, sim, cosine_similarity(neg, emb).ok()?));
            }
        }
        best.or_else(|| {
            let i = e.segments.iter().position(|s| *s == hint)?;
            let emb = &e.segment_embeddings[i];
            Some((hint, cosine_similarity(prompt, emb).ok()?, cosine_similarity(neg, emb).ok()?))
        })
    }

    fn pick_reference(&self, req: &GenerationRequest) -> Result<Option<(EntryId, PyramidDescriptor)>> {
        if self.store.is_empty() {
            return Ok(None);
        }
        let hits = self.store.search(&req.prompt, self.config.selector.top_k)?;
        match self.config.retrieval {
            Retrieval::Disabled => Ok(None),
            Retrieval::Nearest => {
                let mut best: Option<(EntryId, f64)> = None;
                for h in &hits {
                    let e = self.store.get(h.entry).ok_or(Error::UnknownEntry(h.entry.0))?;
                    let sim = cosine_similarity(&req.prompt, e.embedding())?;
                    if best.is_none_or(|b| sim > b.1) {
                        best = Some((h.entry, sim));
                    }
                }
                Ok(best.and_then(|(id, _)| {
                    let e = self.store.get(id)?;
                    Some((id, PyramidDescriptor::full(id, e.duration())))
                }))
            }
            Retrieval::Selector => {
                let candidates: Vec<Candidate> = hits
                    .iter()
                    .filter_map(|h| {
                        let (segment, s_pos, s_neg) = self.best_segment(h.entry, &req.prompt, req.duration, h.segment)?;
                        Some(Candidate {
                            entry: h.entry,
                            segment,
                            s_pos,
                            s_neg,
                            duration: f64::from(segment.length),
                        })
                    })
                    .collect();
                let scored = score_candidates(&candidates, req.duration);
                let mut rng = derive(self.request_seed(req), 0x5e1);
                Ok(select(&scored, &self.config.selector, &mut rng).map(|c| (c.entry, c.segment)))
            }
        }
    }

    fn align(&self, entry: EntryId, segment: PyramidDescriptor, req: &GenerationRequest) -> Result<Reference> {
        let e = self.store.get(entry).ok_or(Error::UnknownEntry(entry.0))?;
        let embedding = match e.segments.iter().position(|s| *s == segment) {
            Some(i) => e.segment_embeddings[i].clone(),
            None => e.embedding().clone(),
        };
        let piece = e.clip.latent.slice_seconds(f64::from(segment.start), f64::from(segment.length));
        let stft = if piece.sample_rate == LATENT_RATE {
            self.config.stft
        } else {
            StftConfig::for_rate(piece.sample_rate)
        };
        let latent = time_stretch(&piece, req.duration, &stft)?;
        let similarity = cosine_similarity(&req.prompt, &embedding)?;
        Ok(Reference {
            entry,
            segment,
            clip: SimClip {
                latent,
                embedding,
                duration: req.duration,
                provenance: e.clip.provenance.clone(),
            },
            similarity,
        })
    }

    fn choose_skip(&self, reference: &Reference, req: &GenerationRequest) -> Result<usize> {
        let arms = &self.gater.arms;
        Ok(match self.config.policy {
            SkipPolicy::Gater(mode) => {
                let phi = context_features(&req.prompt, &reference.clip.embedding, req.total_steps)?;
                self.gater.choose_arm(&phi, mode)
            }
            SkipPolicy::Threshold { threshold, skip } => {
                if reference.similarity >= threshold {
                    arms.floor_arm(skip)
                } else {
                    0
                }
            }
            SkipPolicy::Fixed(skip) => arms.floor_arm(skip),
        })
    }

    /// Retrieval, selection, alignment and gating. Any failure yields a
    /// cold plan carrying the failing stage's name.
    pub fn plan(&self, req: &GenerationRequest) -> Plan {
        let cold = |fallback| Plan {
            reference: None,
            arm: 0,
            skip_fraction: 0.0,
            fallback,
        };
        if self.config.retrieval == Retrieval::Disabled {
            return cold(None);
        }
        let picked = match self.pick_reference(req) {
            Ok(Some(p)) => p,
            Ok(None) => return cold(None),
            Err(e) => {
                log::warn!("request {}: retrieval failed: {e}", req.id);
                return cold(Some("retrieval"));
            }
        };
        let reference = match self.align(picked.0, picked.1, req) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("request {}: alignment failed: {e}", req.id);
                return cold(Some("vocoder"));
            }
        };
        match self.choose_skip(&reference, req) {
            Ok(arm) => Plan {
                skip_fraction: self.gater.arms.fraction(arm),
                arm,
                reference: Some(reference),
                fallback: None,
            },
            Err(e) => {
                log::warn!("request {}: gating failed: {e}", req.id);
                cold(Some("gater"))
            }
        }
    }

    /// Serves one request at simulated time `now` (seconds). Cache updates
    /// are queued; see [`Pipeline::flush`].
    pub fn handle_request(&mut self, req: &GenerationRequest, now: f64) -> Result<ServeOutcome> {
        req.validate()?;
        let seed = self.request_seed(req);
        let t0 = self.clock.now();
        let mut plan = self.plan(req);
        let overhead = (self.clock.now() - t0).max(0.0);

        let warm = plan.reference.as_ref().map(|r| WarmStart {
            reference: &r.clip,
            skip_fraction: plan.skip_fraction,
        });
        let generation: Generation = match self.generator.generate(&req.prompt, req.duration, req.total_steps, warm, seed) {
            Ok(g) => g,
            Err(e) if plan.reference.is_some() => {
                log::warn!("request {}: warm start failed: {e}", req.id);
                plan = Plan {
                    reference: None,
                    arm: 0,
                    skip_fraction: 0.0,
                    fallback: Some("generator"),
                };
                self.generator.generate(&req.prompt, req.duration, req.total_steps, None, seed)?
            }
            Err(e) => return Err(e),
        };

        let entry = plan.reference.as_ref().map(|r| r.entry);
        if let Some(id) = entry {
            self.pending.push(CacheEvent::Reuse {
                entry: id,
                steps_skipped: generation.steps_skipped,
                duration: req.duration,
                skip_fraction: plan.skip_fraction,
                time: now,
            });
        }
        if self.config.retrieval != Retrieval::Disabled {
            self.pending.push(CacheEvent::Admit {
                clip: generation.clip,
                prompt: req.prompt.clone(),
                quality: generation.quality,
                time: now + generation.service_time,
            });
        }
        Ok(ServeOutcome {
            request_id: req.id,
            cache_hit: entry.is_some(),
            entry,
            arm: plan.arm,
            skip_fraction: plan.skip_fraction,
            steps_skipped: steps_skipped(plan.skip_fraction, req.total_steps),
            total_steps: req.total_steps,
            quality: generation.quality,
            nfe: generation.nfe,
            service_time: generation.service_time,
            queue_delay: 0.0,
            wall_overhead: overhead,
            fallback: plan.fallback,
        })
    }

    /// Applies queued cache events in order.
    pub fn flush(&mut self) -> Result<FlushReport> {
        let mut report = FlushReport::default();
        for event in core::mem::take(&mut self.pending) {
            match event {
                CacheEvent::Reuse {
                    entry,
                    steps_skipped,
                    duration,
                    skip_fraction,
                    time,
                } => {
                    self.store
                        .record_reuse(entry, steps_skipped, duration, skip_fraction, seconds_to_hours(time));
                }
                CacheEvent::Admit {
                    clip,
                    prompt,
                    quality,
                    time,
                } => {
                    let a = self.store.admit(clip, prompt, quality, seconds_to_hours(time))?;
                    report.admitted.extend(a.entry);
                    report.evicted.extend(a.evicted);
                }
            }
        }
        Ok(report)
    }

    /// Modeled duration of one refinement attempt on `entry`.
    pub fn refinement_cost(&self, entry: EntryId, total_steps: u32) -> Option<f64>
    where
        G: CostModel,
    {
        let e = self.store.get(entry)?;
        Some(self.generator.nfe_time(total_steps, e.duration()) * self.config.cache.regenerations as f64)
    }

    /// Runs refinement attempts that fit within `budget` seconds of idle
    /// time. Returns the time used.
    pub fn refine_idle(&mut self, budget: f64, total_steps: u32) -> Result<f64>
    where
        G: CostModel,
    {
        let mut used = 0.0;
        for id in self.store.refinement_candidates() {
            let Some(cost) = self.refinement_cost(id, total_steps) else {
                continue;
            };
            if used + cost > budget {
                break;
            }
            let seed = mix(self.config.seed ^ 0x7ef1_0e ^ mix(id.0));
            if let Some(task) = self.store.refine(id, &self.generator, total_steps, seed)? {
                self.refinements.push(task);
            }
            used += cost;
        }
        Ok(used)
    }
}

/// Modeled generator time, used for idle-time budgeting and baselines.
pub trait CostModel {
    /// Seconds to run `steps` denoising steps for `duration` seconds of audio.
    fn nfe_time(&self, steps: u32, duration: f64) -> f64;
}

impl CostModel for crate::simgen::SimGenerator {
    fn nfe_time(&self, steps: u32, duration: f64) -> f64 {
        self.step_cost(steps, duration)
    }
}
