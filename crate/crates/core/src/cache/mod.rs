//! Cache store and its utility bookkeeping.
//!
//! Every reuse adds `S * D` (steps skipped times seconds of audio) to the
//! entry's importance, which decays by `gamma` per hour. When the store is
//! over capacity the entry with the lowest decayed importance goes first.
//! Entries whose recent reuses yield little skipping are queued for
//! best-of-N regeneration while the system is idle.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::index::{pyramid_segments, simulated_segment_embeddings, IndexParams, IndexedVector, IvfIndex, PyramidDescriptor, SearchHit};
use crate::rng::mix;
use crate::simgen::{Generator, SimClip};
use crate::types::EntryId;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    pub capacity: usize,
    /// Importance retained after one hour.
    pub decay_per_hour: f64,
    /// Hours after insertion during which an entry is not evictable.
    pub grace_hours: f64,
    /// Outputs below this quality are not admitted.
    pub quality_floor: f64,
    pub max_attempts: u32,
    /// Regenerations per refinement attempt.
    pub regenerations: usize,
    /// Reuses averaged by the refinement trigger.
    pub trigger_window: usize,
    /// Mean skip fraction below which an entry is refined.
    pub trigger_skip: f64,
    /// Reuse events kept for auditing.
    pub audit_capacity: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: 1024,
            decay_per_hour: 0.9,
            grace_hours: 1.0,
            quality_floor: 0.3,
            max_attempts: 5,
            regenerations: 3,
            trigger_window: 10,
            trigger_skip: 0.10,
            audit_capacity: 4096,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidConfig("cache capacity must be >= 1"));
        }
        if !(self.decay_per_hour > 0.0 && self.decay_per_hour <= 1.0) {
            return Err(Error::InvalidConfig("decay_per_hour must be in (0, 1]"));
        }
        if !(self.grace_hours >= 0.0) {
            return Err(Error::InvalidConfig("grace_hours must be >= 0"));
        }
        if self.regenerations == 0 || self.trigger_window == 0 {
            return Err(Error::InvalidConfig("regenerations and trigger_window must be >= 1"));
        }
        Ok(())
    }
}

/// `value * gamma^dt`; negative `dt` is treated as zero.
pub fn decay(value: f64, gamma: f64, dt_hours: f64) -> f64 {
    if dt_hours <= 0.0 {
        value
    } else {
        value * gamma.powf(dt_hours)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceRecord {
    /// Importance as of `last_update`.
    pub value: f64,
    /// Hours.
    pub last_update: f64,
    /// Hours.
    pub inserted_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReuseEvent {
    pub entry: EntryId,
    pub steps_skipped: u32,
    pub duration: f64,
    /// Hours.
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct ImportanceLedger {
    gamma: f64,
    records: BTreeMap<EntryId, ImportanceRecord>,
    audit: VecDeque<ReuseEvent>,
    audit_capacity: usize,
}

impl ImportanceLedger {
    pub fn new(gamma: f64, audit_capacity: usize) -> Self {
        Self {
            gamma,
            records: BTreeMap::new(),
            audit: VecDeque::new(),
            audit_capacity,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Starts tracking `entry` at zero importance.
    pub fn track(&mut self, entry: EntryId, now: f64) {
        self.records.insert(
            entry,
            ImportanceRecord {
                value: 0.0,
                last_update: now,
                inserted_at: now,
            },
        );
    }

    pub fn restore(&mut self, entry: EntryId, record: ImportanceRecord) {
        self.records.insert(entry, record);
    }

    pub fn forget(&mut self, entry: EntryId) -> Option<ImportanceRecord> {
        self.records.remove(&entry)
    }

    pub fn get(&self, entry: EntryId) -> Option<&ImportanceRecord> {
        self.records.get(&entry)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.records.keys().copied()
    }

    /// Decays the entry to `now`, then adds `steps_skipped * duration`.
    /// Unknown entries are ignored with a warning.
    pub fn record_reuse(&mut self, entry: EntryId, steps_skipped: u32, duration: f64, now: f64) -> bool {
        let gamma = self.gamma;
        let Some(rec) = self.records.get_mut(&entry) else {
            log::warn!("reuse recorded for unknown cache entry {entry}");
            return false;
        };
        rec.value = decay(rec.value, gamma, now - rec.last_update) + f64::from(steps_skipped) * duration.max(0.0);
        rec.last_update = rec.last_update.max(now);
        if self.audit_capacity > 0 {
            if self.audit.len() == self.audit_capacity {
                self.audit.pop_front();
            }
            self.audit.push_back(ReuseEvent {
                entry,
                steps_skipped,
                duration,
                time: now,
            });
        }
        true
    }

    /// Importance decayed to `now`.
    pub fn importance_at(&self, entry: EntryId, now: f64) -> Option<f64> {
        self.records
            .get(&entry)
            .map(|r| decay(r.value, self.gamma, now - r.last_update))
    }

    pub fn audit(&self) -> impl Iterator<Item = &ReuseEvent> {
        self.audit.iter()
    }

    /// Entry to evict at `now`: minimal decayed importance, then oldest
    /// `last_update`, then lowest id. Entries younger than `grace_hours` are
    /// skipped unless every entry is that young.
    pub fn victim(&self, now: f64, grace_hours: f64) -> Option<EntryId> {
        let pick = |eligible: &dyn Fn(&ImportanceRecord) -> bool| {
            self.records
                .iter()
                .filter(|(_, r)| eligible(r))
                .map(|(&id, r)| (decay(r.value, self.gamma, now - r.last_update), r.last_update, id))
                .min_by(eviction_order)
                .map(|t| t.2)
        };
        pick(&|r| now - r.inserted_at >= grace_hours).or_else(|| {
            let fallback = pick(&|_| true);
            if fallback.is_some() {
                log::warn!("every cache entry is inside its grace window; evicting anyway");
            }
            fallback
        })
    }
}

fn eviction_order(a: &(f64, f64, EntryId), b: &(f64, f64, EntryId)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: EntryId,
    pub clip: SimClip,
    pub prompt: EmbeddingVector,
    pub quality: f64,
    pub segments: Vec<PyramidDescriptor>,
    pub segment_embeddings: Vec<EmbeddingVector>,
    /// Refinement attempts used.
    pub attempts: u32,
    pub reuse_count: u64,
    /// Skip fractions of the most recent reuses, oldest first.
    pub recent_skips: VecDeque<f64>,
}

impl CacheEntry {
    pub fn duration(&self) -> f64 {
        self.clip.duration
    }

    pub fn embedding(&self) -> &EmbeddingVector {
        &self.clip.embedding
    }

    fn indexed_vectors(&self) -> Vec<IndexedVector> {
        self.segments
            .iter()
            .zip(&self.segment_embeddings)
            .map(|(s, e)| IndexedVector::new(*s, e))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    /// `None` when the output was below the quality floor.
    pub entry: Option<EntryId>,
    pub evicted: Vec<EntryId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineReason {
    /// Recent reuses skipped too few steps.
    LowSkipYield,
    /// Requested explicitly.
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTask {
    pub entry: EntryId,
    pub reason: RefineReason,
    pub attempts: u32,
    pub best_quality: f64,
    pub replaced: bool,
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    config: CacheConfig,
    entries: BTreeMap<EntryId, CacheEntry>,
    ledger: ImportanceLedger,
    index: IvfIndex,
    next_id: u64,
}

impl CacheStore {
    pub fn new(config: CacheConfig, dim: usize, index: IndexParams) -> Result<Self> {
        config.validate()?;
        index.validate()?;
        Ok(Self {
            ledger: ImportanceLedger::new(config.decay_per_hour, config.audit_capacity),
            index: IvfIndex::empty(dim, index),
            config,
            entries: BTreeMap::new(),
            next_id: 0,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn set_capacity(&mut self, capacity: usize) -> Result<()> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("cache capacity must be >= 1"));
        }
        self.config.capacity = capacity;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: EntryId) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    pub fn ledger(&self) -> &ImportanceLedger {
        &self.ledger
    }

    pub fn index(&self) -> &IvfIndex {
        &self.index
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Ids below `next` are never handed out again.
    pub fn reserve_ids(&mut self, next: u64) {
        self.next_id = self.next_id.max(next);
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>> {
        self.index.search(query, k, self.index.params().nprobe)
    }

    fn segment_embeddings(&self, id: EntryId, clip: &SimClip) -> Result<(Vec<PyramidDescriptor>, Vec<EmbeddingVector>)> {
        let params = self.index.params();
        let segments = pyramid_segments(id, clip.duration, params.min_granularity);
        let seed = params.seed ^ mix(clip.provenance.seed);
        let embeddings = simulated_segment_embeddings(&clip.embedding, &segments, seed)?;
        Ok((segments, embeddings))
    }

    /// Inserts a generated output at zero importance, then enforces capacity.
    /// Outputs below the quality floor leave the cache unchanged.
    pub fn admit(&mut self, clip: SimClip, prompt: EmbeddingVector, quality: f64, now: f64) -> Result<Admission> {
        if !(quality >= self.config.quality_floor) {
            return Ok(Admission {
                entry: None,
                evicted: Vec::new(),
            });
        }
        if clip.embedding.dim() != self.index.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.index.dim(),
                actual: clip.embedding.dim(),
            });
        }
        let id = EntryId(self.next_id);
        let (segments, segment_embeddings) = self.segment_embeddings(id, &clip)?;
        let entry = CacheEntry {
            id,
            clip,
            prompt,
            quality,
            segments,
            segment_embeddings,
            attempts: 0,
            reuse_count: 0,
            recent_skips: VecDeque::new(),
        };
        self.index.insert(entry.indexed_vectors())?;
        self.next_id += 1;
        self.entries.insert(id, entry);
        self.ledger.track(id, now);
        let evicted = self.evict_if_full(now)?;
        Ok(Admission {
            entry: Some(id),
            evicted,
        })
    }

    /// Puts back an entry with its saved importance, e.g. from a snapshot.
    pub fn restore(&mut self, entry: CacheEntry, importance: ImportanceRecord) -> Result<()> {
        self.index.insert(entry.indexed_vectors())?;
        self.next_id = self.next_id.max(entry.id.0 + 1);
        self.ledger.restore(entry.id, importance);
        self.entries.insert(entry.id, entry);
        Ok(())
    }

    /// Replaces the index wholesale; its entry set must match the store's.
    pub fn replace_index(&mut self, index: IvfIndex) -> Result<()> {
        let same = index.entry_count() == self.entries.len() && self.entries.keys().all(|&id| index.contains(id));
        if !same {
            return Err(Error::InvalidConfig("index entries do not match cache entries"));
        }
        self.index = index;
        Ok(())
    }

    pub fn record_reuse(&mut self, id: EntryId, steps_skipped: u32, duration: f64, skip_fraction: f64, now: f64) -> bool {
        if !self.ledger.record_reuse(id, steps_skipped, duration, now) {
            return false;
        }
        if let Some(e) = self.entries.get_mut(&id) {
            e.reuse_count += 1;
            if e.recent_skips.len() == self.config.trigger_window {
                e.recent_skips.pop_front();
            }
            e.recent_skips.push_back(skip_fraction);
        }
        true
    }

    /// Evicts lowest-importance entries until the store fits its capacity.
    pub fn evict_if_full(&mut self, now: f64) -> Result<Vec<EntryId>> {
        let mut evicted = Vec::new();
        while self.entries.len() > self.config.capacity {
            let Some(victim) = self.ledger.victim(now, self.config.grace_hours) else {
                break;
            };
            self.remove(victim)?;
            evicted.push(victim);
        }
        Ok(evicted)
    }

    pub fn remove(&mut self, id: EntryId) -> Result<Option<CacheEntry>> {
        let entry = self.entries.remove(&id);
        self.ledger.forget(id);
        self.index.remove(id)?;
        Ok(entry)
    }

    fn wants_refinement(&self, e: &CacheEntry) -> bool {
        let w = self.config.trigger_window;
        e.attempts < self.config.max_attempts
            && e.recent_skips.len() >= w
            && e.recent_skips.iter().sum::<f64>() / (w as f64) < self.config.trigger_skip
    }

    /// Entries whose last reuses skipped too little, lowest id first.
    pub fn refinement_candidates(&self) -> Vec<EntryId> {
        self.entries
            .values()
            .filter(|e| self.wants_refinement(e))
            .map(|e| e.id)
            .collect()
    }

    /// One refinement attempt: cold-generates the entry's prompt
    /// `regenerations` times and keeps the best output if it beats the stored
    /// quality. Returns `Ok(None)` once the attempt budget is spent.
    pub fn refine<G: Generator + ?Sized>(
        &mut self,
        id: EntryId,
        generator: &G,
        total_steps: u32,
        seed: u64,
    ) -> Result<Option<RefinementTask>> {
        let entry = self.entries.get(&id).ok_or(Error::UnknownEntry(id.0))?;
        if entry.attempts >= self.config.max_attempts {
            log::info!("refinement budget exhausted for entry {id}");
            return Ok(None);
        }
        let reason = if self.wants_refinement(entry) {
            RefineReason::LowSkipYield
        } else {
            RefineReason::Manual
        };
        let attempt = entry.attempts;
        let mut best = None::<crate::simgen::Generation>;
        for r in 0..self.config.regenerations {
            let s = mix(seed ^ mix(id.0) ^ (u64::from(attempt) << 32 | r as u64));
            let g = generator.generate(&entry.prompt, entry.duration(), total_steps, None, s)?;
            if best.as_ref().is_none_or(|b| g.quality > b.quality) {
                best = Some(g);
            }
        }
        let best = best.expect("at least one regeneration");
        let best_quality = best.quality;
        let replaced = best_quality > entry.quality;
        if replaced {
            let (segments, segment_embeddings) = self.segment_embeddings(id, &best.clip)?;
            let e = self.entries.get_mut(&id).expect("checked above");
            e.clip = best.clip;
            e.quality = best_quality;
            e.segments = segments;
            e.segment_embeddings = segment_embeddings;
            let items = e.indexed_vectors();
            self.index.insert(items)?;
        }
        let e = self.entries.get_mut(&id).expect("checked above");
        e.attempts += 1;
        e.recent_skips.clear();
        Ok(Some(RefinementTask {
            entry: id,
            reason,
            attempts: e.attempts,
            best_quality,
            replaced,
        }))
    }

    /// Disagreements between the entry map, the ledger and the index.
    pub fn consistency_violations(&self) -> Vec<String> {
        let mut out = self.index.consistency_violations();
        let ledger: Vec<EntryId> = self.ledger.ids().collect();
        let entries: Vec<EntryId> = self.entries.keys().copied().collect();
        let index: Vec<EntryId> = self.index.entry_ids().collect();
        if ledger != entries {
            out.push(String::from("ledger and entry map disagree"));
        }
        if index != entries {
            out.push(String::from("index and entry map disagree"));
        }
        if self.entries.len() > self.config.capacity {
            out.push(String::from("cache over capacity"));
        }
        out
    }
}

#[cfg(test)]
mod tests;
