use super::*;
use crate::rng::seeded;
use crate::simgen::{Generation, Provenance, SimGenerator};
use crate::types::AudioClip;
use core::cell::RefCell;
use rand::Rng;

const DIM: usize = 16;

fn clip(embedding: EmbeddingVector, duration: f64, seed: u64) -> SimClip {
    SimClip {
        latent: crate::simgen::synthesize_latent(&embedding, duration),
        provenance: Provenance {
            prompt: embedding.clone(),
            skip_fraction: 0.0,
            seed,
        },
        embedding,
        duration,
    }
}

fn store(capacity: usize) -> CacheStore {
    let cfg = CacheConfig {
        capacity,
        ..CacheConfig::default()
    };
    CacheStore::new(cfg, DIM, IndexParams::default()).unwrap()
}

fn admit_random(s: &mut CacheStore, rng: &mut crate::rng::SimRng, now: f64) -> Admission {
    let e = EmbeddingVector::random(DIM, rng);
    let seed = rng.random();
    s.admit(clip(e.clone(), 8.0, seed), e, 0.9, now).unwrap()
}

#[test]
fn reuse_example_values() {
    let mut l = ImportanceLedger::new(0.9, 8);
    l.track(EntryId(1), 0.0);
    l.track(EntryId(2), 0.0);
    assert!(l.record_reuse(EntryId(1), 110, 10.0, 0.0));
    assert_eq!(l.importance_at(EntryId(1), 0.0), Some(1100.0));
    l.track(EntryId(3), 0.0);
    l.record_reuse(EntryId(3), 100, 10.0, 0.0);
    assert!((l.importance_at(EntryId(3), 2.0).unwrap() - 810.0).abs() < 1e-9);
    assert_eq!(l.importance_at(EntryId(2), 5.0), Some(0.0));
    assert!(!l.record_reuse(EntryId(9), 1, 1.0, 0.0));
    assert_eq!(l.audit().count(), 2);
}

#[test]
fn example_eviction_picks_zero_importance() {
    let mut l = ImportanceLedger::new(0.9, 0);
    for id in 0..3 {
        l.track(EntryId(id), 0.0);
    }
    l.record_reuse(EntryId(1), 100, 10.0, 0.0);
    l.record_reuse(EntryId(2), 110, 10.0, 2.0);
    // At t = 2 h: I = {0, 810, 1100}.
    assert_eq!(l.victim(2.0, 1.0), Some(EntryId(0)));
}

#[test]
fn audit_ring_is_bounded() {
    let mut l = ImportanceLedger::new(0.9, 3);
    l.track(EntryId(0), 0.0);
    for t in 0..10 {
        l.record_reuse(EntryId(0), 1, 1.0, f64::from(t));
    }
    let times: Vec<f64> = l.audit().map(|e| e.time).collect();
    assert_eq!(times, vec![7.0, 8.0, 9.0]);
}

/// Importance as a literal decayed event sum.
fn event_sum(events: &[(u32, f64, f64)], now: f64) -> f64 {
    events
        .iter()
        .map(|&(s, d, t)| f64::from(s) * d * 0.9f64.powf(now - t))
        .sum()
}

#[test]
fn eviction_matches_brute_force_sort() {
    let mut rng = seeded(42);
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let mut l = ImportanceLedger::new(0.9, 0);
        let mut history: Vec<Vec<(u32, f64, f64)>> = vec![Vec::new(); n];
        let mut last = vec![0.0; n];
        for id in 0..n {
            l.track(EntryId(id as u64), 0.0);
        }
        let mut t = 0.0;
        for _ in 0..rng.random_range(0..40) {
            t += rng.random_range(0.0..0.5);
            let id = rng.random_range(0..n);
            let s = rng.random_range(0..140);
            let d = rng.random_range(4.0..12.0);
            l.record_reuse(EntryId(id as u64), s, d, t);
            history[id].push((s, d, t));
            last[id] = t;
        }
        let now = t + rng.random_range(1.0..5.0);
        let mut expected: Vec<(f64, f64, u64)> = (0..n)
            .map(|i| (event_sum(&history[i], now), last[i], i as u64))
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut order = Vec::new();
        while let Some(v) = l.victim(now, 1.0) {
            order.push(v.0);
            l.forget(v);
        }
        let want: Vec<u64> = expected.iter().map(|e| e.2).collect();
        assert_eq!(order, want);
    }
}

#[test]
fn lazy_decay_matches_fine_grained_steps() {
    let mut rng = seeded(7);
    for _ in 0..200 {
        let mut l = ImportanceLedger::new(0.9, 0);
        l.track(EntryId(0), 0.0);
        let mut fine = 0.0;
        let step = 0.01;
        let mut tick = 0u32;
        for _ in 0..20 {
            let ticks = rng.random_range(0..100);
            for _ in 0..ticks {
                fine *= 0.9f64.powf(step);
            }
            tick += ticks;
            let s = rng.random_range(0..140);
            let d = rng.random_range(4.0..12.0);
            let now = f64::from(tick) * step;
            l.record_reuse(EntryId(0), s, d, now);
            fine += f64::from(s) * d;
        }
        for _ in 0..250 {
            fine *= 0.9f64.powf(step);
        }
        let lazy = l.importance_at(EntryId(0), f64::from(tick + 250) * step).unwrap();
        assert!((lazy - fine).abs() <= 1e-9 * fine.abs().max(1e-300), "{lazy} {fine}");
    }
}

#[test]
fn more_recent_and_frequent_reuse_survives() {
    let mut rng = seeded(9);
    for _ in 0..300 {
        let mut l = ImportanceLedger::new(0.9, 0);
        l.track(EntryId(0), 0.0);
        l.track(EntryId(1), 0.0);
        let shared: Vec<(u32, f64, f64)> = (0..rng.random_range(0..5))
            .map(|k| (rng.random_range(1..100), rng.random_range(4.0..12.0), f64::from(k) * 0.3))
            .collect();
        for &(s, d, t) in &shared {
            l.record_reuse(EntryId(0), s, d, t);
            l.record_reuse(EntryId(1), s, d, t);
        }
        // Entry 1 gets an extra, later reuse.
        l.record_reuse(EntryId(1), rng.random_range(1..100), 8.0, 2.0);
        assert_eq!(l.victim(3.0 + rng.random::<f64>(), 1.0), Some(EntryId(0)));
    }
}

#[test]
fn admit_and_search() {
    let mut s = store(4);
    let mut rng = seeded(1);
    let e = EmbeddingVector::random(DIM, &mut rng);
    let a = s.admit(clip(e.clone(), 6.0, 1), e.clone(), 0.9, 0.0).unwrap();
    let id = a.entry.unwrap();
    let hits = s.search(&e, 1).unwrap();
    assert_eq!(hits[0].entry, id);
    assert!(hits[0].similarity > 0.999);
    assert_eq!(s.ledger().importance_at(id, 0.0), Some(0.0));
    assert!(s.consistency_violations().is_empty());
}

#[test]
fn below_floor_is_not_admitted() {
    let mut s = store(4);
    let mut rng = seeded(2);
    let e = EmbeddingVector::random(DIM, &mut rng);
    let a = s.admit(clip(e.clone(), 6.0, 1), e, 0.29, 0.0).unwrap();
    assert_eq!(a.entry, None);
    assert!(s.is_empty());
    assert!(s.index().is_empty());
}

#[test]
fn grace_window_protects_new_entries() {
    let mut s = store(2);
    let mut rng = seeded(3);
    let a = admit_random(&mut s, &mut rng, 0.0).entry.unwrap();
    let b = admit_random(&mut s, &mut rng, 0.0).entry.unwrap();
    s.record_reuse(a, 50, 8.0, 0.25, 0.5);
    s.record_reuse(b, 100, 8.0, 0.5, 0.5);
    let adm = admit_random(&mut s, &mut rng, 2.0);
    assert_eq!(adm.evicted, vec![a]);
    assert!(s.get(adm.entry.unwrap()).is_some());
    // With every entry young the lowest importance still goes.
    let mut s = store(1);
    let a = admit_random(&mut s, &mut rng, 0.0).entry.unwrap();
    s.record_reuse(a, 10, 8.0, 0.1, 0.0);
    let adm = admit_random(&mut s, &mut rng, 0.1);
    assert_eq!(adm.evicted, vec![adm.entry.unwrap()]);
}

#[test]
fn capacity_and_consistency_under_random_mutation() {
    let mut s = store(20);
    let mut rng = seeded(4);
    let mut now = 0.0;
    for _ in 0..400 {
        now += rng.random_range(0.0..0.2);
        if rng.random_bool(0.5) || s.is_empty() {
            admit_random(&mut s, &mut rng, now);
            assert!(s.len() <= 20);
        } else {
            let ids: Vec<EntryId> = s.entries().map(|e| e.id).collect();
            let id = ids[rng.random_range(0..ids.len())];
            s.record_reuse(id, rng.random_range(0..140), 8.0, 0.3, now);
        }
        assert!(s.consistency_violations().is_empty(), "{:?}", s.consistency_violations());
    }
}

struct Scripted {
    qualities: RefCell<Vec<f64>>,
    inner: SimGenerator,
}

impl Generator for Scripted {
    fn generate(
        &self,
        prompt: &EmbeddingVector,
        duration: f64,
        total_steps: u32,
        warm: Option<crate::simgen::WarmStart<'_>>,
        seed: u64,
    ) -> Result<Generation> {
        let mut g = self.inner.generate(prompt, duration, total_steps, warm, seed)?;
        g.quality = self.qualities.borrow_mut().remove(0);
        Ok(g)
    }
}

fn scripted(q: &[f64]) -> Scripted {
    Scripted {
        qualities: RefCell::new(q.to_vec()),
        inner: SimGenerator::default(),
    }
}

#[test]
fn refine_keeps_best_of_three() {
    let mut s = store(4);
    let mut rng = seeded(5);
    let e = EmbeddingVector::random(DIM, &mut rng);
    let id = s.admit(clip(e.clone(), 8.0, 1), e, 0.4, 0.0).unwrap().entry.unwrap();
    let t = s.refine(id, &scripted(&[0.5, 0.7, 0.6]), 200, 1).unwrap().unwrap();
    assert!(t.replaced);
    assert_eq!(t.attempts, 1);
    assert_eq!(s.get(id).unwrap().quality, 0.7);
    assert!(s.consistency_violations().is_empty());

    let before = s.get(id).unwrap().clone();
    let t = s.refine(id, &scripted(&[0.1, 0.2, 0.3]), 200, 2).unwrap().unwrap();
    assert!(!t.replaced);
    let after = s.get(id).unwrap();
    assert_eq!(after.attempts, 2);
    assert_eq!(after.clip, before.clip);
    assert_eq!(after.quality, 0.7);
}

#[test]
fn refine_attempt_cap() {
    let mut s = store(4);
    let mut rng = seeded(6);
    let e = EmbeddingVector::random(DIM, &mut rng);
    let id = s.admit(clip(e.clone(), 8.0, 1), e, 0.4, 0.0).unwrap().entry.unwrap();
    let g = SimGenerator::default();
    let mut last = 0.4;
    for k in 1..=5 {
        let t = s.refine(id, &g, 200, k).unwrap().unwrap();
        assert_eq!(t.attempts, k as u32);
        let q = s.get(id).unwrap().quality;
        assert!(q >= last);
        last = q;
    }
    assert_eq!(s.refine(id, &g, 200, 6).unwrap(), None);
    assert_eq!(s.get(id).unwrap().attempts, 5);
    assert!(matches!(s.refine(EntryId(99), &g, 200, 1), Err(Error::UnknownEntry(99))));
}

#[test]
fn refinement_trigger() {
    let mut s = store(4);
    let mut rng = seeded(7);
    let a = admit_random(&mut s, &mut rng, 0.0).entry.unwrap();
    let b = admit_random(&mut s, &mut rng, 0.0).entry.unwrap();
    for k in 0..9 {
        s.record_reuse(a, 10, 8.0, 0.05, f64::from(k) * 0.01);
        s.record_reuse(b, 100, 8.0, 0.5, f64::from(k) * 0.01);
    }
    assert!(s.refinement_candidates().is_empty());
    s.record_reuse(a, 10, 8.0, 0.05, 0.1);
    s.record_reuse(b, 100, 8.0, 0.5, 0.1);
    assert_eq!(s.refinement_candidates(), vec![a]);
    let t = s.refine(a, &SimGenerator::default(), 200, 3).unwrap().unwrap();
    assert_eq!(t.reason, RefineReason::LowSkipYield);
    assert!(s.refinement_candidates().is_empty());
}

#[test]
fn refine_requires_matching_duration_payload() {
    let mut s = store(2);
    let mut rng = seeded(8);
    let e = EmbeddingVector::random(DIM, &mut rng);
    let id = s.admit(clip(e.clone(), 5.0, 1), e, 0.4, 0.0).unwrap().entry.unwrap();
    s.refine(id, &SimGenerator::default(), 200, 1).unwrap();
    let entry = s.get(id).unwrap();
    assert_eq!(entry.duration(), 5.0);
    assert_eq!(entry.clip.latent, AudioClip::new(entry.clip.latent.samples.clone(), 100));
}
