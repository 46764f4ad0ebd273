//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. INFO lines are reported but never fail the run.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use reprise_core::cache::ImportanceLedger;
use reprise_core::gater::{
    batch_gradient, loss, prepare, rank_normalize, reward, train_offline, ArmSet, BanditModel, Mode,
    QualityTarget, TrainOptions, TrainingRecord, ALPHA, FEATURE_DIM,
};
use reprise_core::index::{IndexParams, IndexedVector, IvfIndex, PyramidDescriptor};
use reprise_core::pipeline::{default_gater, replay, Pipeline, PipelineConfig, ReplayOptions, SkipPolicy, Variant};
use reprise_core::rng::seeded;
use reprise_core::selector::{score_candidates, Candidate};
use reprise_core::simgen::{
    default_training_records, oracle_arm, sample_contexts, synth_workload, workload_contexts, PromptSpace,
    SimGenerator, WorkloadConfig,
};
use reprise_core::vocoder::{time_stretch, StftConfig};
use reprise_core::{AudioClip, EmbeddingVector, EntryId};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const FORMULA_TOLERANCE: f64 = 1e-9;
const FORMULA_CASES: usize = 200;
const SPEEDUP_BAND: (f64, f64) = (1.8, 3.5);
const QUALITY_SLACK: f64 = 0.02;
const CACHE_SIZES: [usize; 5] = [100, 500, 1000, 2000, 5000];
const MIN_SPEARMAN: f64 = 0.9;
const ARM_AGREEMENT: f64 = 0.8;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const PITCH_TOLERANCE: f64 = 0.01;
const IDENTITY_TOLERANCE: f32 = 1e-3;
const MIN_RECALL: f64 = 0.9;
const DECAY: f64 = 0.9;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= FORMULA_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

// 1. Formula fidelity.

fn gate_oracle(c: &[(f64, f64, f64)], requested: f64) -> Option<Vec<(f64, f64, f64)>> {
    let clip = |x: f64| x.clamp(0.0, 1.0);
    let mut best_pos = 0.0;
    let mut best_dissim = 0.0;
    for &(p, n, _) in c {
        if clip(p) > best_pos {
            best_pos = clip(p);
        }
        if 1.0 - clip(n) > best_dissim {
            best_dissim = 1.0 - clip(n);
        }
    }
    if best_pos == 0.0 {
        return None;
    }
    Some(
        c.iter()
            .map(|&(p, n, d)| {
                let a = clip(p) / best_pos;
                let b = if best_dissim == 0.0 { 0.0 } else { (1.0 - clip(n)) / best_dissim };
                let fits = 2.0 * d >= requested && 2.0 * d <= 3.0 * requested;
                (a, b, if fits { a.min(b) } else { 0.0 })
            })
            .collect(),
    )
}

fn check_gate(rng: &mut impl Rng) -> Result<(), String> {
    for case in 0..FORMULA_CASES {
        let n = rng.random_range(1..10);
        let requested = rng.random_range(4.0..12.0);
        let raw: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(-0.3..1.0),
                    rng.random_range(-0.3..1.0),
                    rng.random_range(1.0..20.0),
                )
            })
            .collect();
        let candidates: Vec<Candidate> = raw
            .iter()
            .enumerate()
            .map(|(i, &(p, s, d))| Candidate {
                entry: EntryId(i as u64),
                segment: PyramidDescriptor::full(EntryId(i as u64), d),
                s_pos: p,
                s_neg: s,
                duration: d,
            })
            .collect();
        let got = score_candidates(&candidates, requested);
        match gate_oracle(&raw, requested) {
            None if got.is_empty() => {}
            None => return Err(format!("case {case}: expected no scores")),
            Some(want) => {
                for (g, w) in got.iter().zip(&want) {
                    if !(close(g.a, w.0) && close(g.b, w.1) && close(g.q, w.2)) {
                        return Err(format!("case {case}: got ({}, {}, {}) want {w:?}", g.a, g.b, g.q));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_reward(rng: &mut impl Rng) -> Result<(), String> {
    for _ in 0..FORMULA_CASES {
        let s = ArmSet::default().fraction(rng.random_range(0..14));
        let q: f64 = rng.random();
        let want = 0.47 * s + 0.53 * q;
        if !close(reward(s, q, ALPHA), want) {
            return Err(format!("reward({s}, {q}) = {} want {want}", reward(s, q, ALPHA)));
        }
    }
    Ok(())
}

/// Rank by counting: strictly smaller values plus half the other ties.
fn counted_ranks(v: &[f64]) -> Vec<f64> {
    if v.len() < 2 {
        return vec![0.5; v.len()];
    }
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let ties = v.iter().filter(|&&y| y == x).count() as f64;
            (below + (ties - 1.0) / 2.0) / (v.len() - 1) as f64
        })
        .collect()
}

fn check_ranks(rng: &mut impl Rng) -> Result<(), String> {
    for _ in 0..FORMULA_CASES {
        let n = rng.random_range(1..20);
        let coarse = rng.random_bool(0.5);
        let v: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.random_range(0..4)) / 4.0 } else { rng.random() })
            .collect();
        let got = rank_normalize(&v);
        let want = counted_ranks(&v);
        if got.iter().zip(&want).any(|(a, b)| !close(*a, *b)) {
            return Err(format!("{v:?}: {got:?} vs {want:?}"));
        }
    }
    Ok(())
}

fn check_weights(rng: &mut impl Rng) -> Result<(), String> {
    let model = BanditModel::new(ArmSet::default());
    for case in 0..FORMULA_CASES {
        let n = rng.random_range(1..30);
        let records: Vec<TrainingRecord> = (0..n as u64)
            .map(|p| TrainingRecord {
                prompt: p,
                features: (0..FEATURE_DIM).map(|_| rng.random()).collect(),
                quality: (0..14)
                    .map(|_| if rng.random_bool(0.1) { 0.5 } else { rng.random() })
                    .collect(),
                efficiency: ArmSet::default().fractions().to_vec(),
            })
            .collect();
        let prepared = prepare(&records, &model, QualityTarget::Rank).map_err(|e| e.to_string())?;
        let variance = |q: &[f64]| {
            let k = q.len() as f64;
            let sq = q.iter().map(|x| x * x).sum::<f64>() / k;
            let m = q.iter().sum::<f64>() / k;
            sq - m * m
        };
        let vars: Vec<f64> = records.iter().map(|r| variance(&r.quality)).collect();
        let mean = vars.iter().sum::<f64>() / vars.len() as f64;
        for ((p, r), v) in prepared.iter().zip(&records).zip(&vars) {
            let want = v / (mean + 1e-8);
            if !close(p.weight, want) {
                return Err(format!("case {case}: weight {} want {want}", p.weight));
            }
            for ((&got, &s), q) in p.rewards.iter().zip(&r.efficiency).zip(counted_ranks(&r.quality)) {
                if !close(got, 0.47 * s + 0.53 * q) {
                    return Err(format!("case {case}: reward {got}"));
                }
            }
        }
    }
    Ok(())
}

/// Random reuse history: `(entry, steps, duration, hours)`, time-ordered.
fn history(rng: &mut impl Rng, entries: usize) -> (Vec<(usize, u32, f64, f64)>, f64) {
    let mut t = 0.0;
    let events = (0..rng.random_range(0..40))
        .map(|_| {
            t += rng.random_range(0.0..0.5);
            (
                rng.random_range(0..entries),
                rng.random_range(0..140),
                rng.random_range(4.0..12.0),
                t,
            )
        })
        .collect();
    (events, t + rng.random_range(1.0..5.0))
}

fn event_sum(events: &[(usize, u32, f64, f64)], entry: usize, now: f64) -> f64 {
    events
        .iter()
        .filter(|e| e.0 == entry)
        .map(|&(_, s, d, t)| f64::from(s) * d * DECAY.powf(now - t))
        .sum()
}

fn check_importance(rng: &mut impl Rng) -> Result<(), String> {
    for case in 0..FORMULA_CASES {
        let n = rng.random_range(1..6);
        let mut l = ImportanceLedger::new(DECAY, 0);
        for id in 0..n {
            l.track(EntryId(id as u64), 0.0);
        }
        let (events, now) = history(rng, n);
        for &(id, s, d, t) in &events {
            l.record_reuse(EntryId(id as u64), s, d, t);
        }
        for id in 0..n {
            let got = l.importance_at(EntryId(id as u64), now).unwrap();
            let want = event_sum(&events, id, now);
            if !close(got, want) {
                return Err(format!("case {case} entry {id}: {got} want {want}"));
            }
        }
    }
    Ok(())
}

type FormulaCheck = fn(&mut reprise_core::rng::SimRng) -> Result<(), String>;

fn formula_fidelity() -> Verdict {
    let mut rng = seeded(0xacc1);
    let checks: [(&str, FormulaCheck); 5] = [
        ("gate", |r| check_gate(r)),
        ("reward", |r| check_reward(r)),
        ("rank", |r| check_ranks(r)),
        ("weights", |r| check_weights(r)),
        ("importance", |r| check_importance(r)),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        if let Err(e) = check(&mut rng) {
            failures.push(format!("{name}: {e}"));
        }
    }
    if failures.is_empty() {
        verdict(true, format!("5 formulas x {FORMULA_CASES} cases within {FORMULA_TOLERANCE:e}"))
    } else {
        verdict(false, failures.join("; "))
    }
}

// 2. Speedup.

fn run(config: PipelineConfig, gater: &BanditModel, trace: &[reprise_core::GenerationRequest]) -> reprise_core::pipeline::RunSummary {
    let mut p = Pipeline::new(config, gater.clone(), SimGenerator::default()).unwrap();
    replay(&mut p, trace, ReplayOptions::default()).unwrap().summary
}

fn speedup() -> Verdict {
    let seed = 3;
    let trace = synth_workload(&WorkloadConfig {
        requests: 2000,
        near_duplicate_rate: 0.9,
        seed,
        ..WorkloadConfig::default()
    })
    .unwrap();
    let gater = default_gater(seed).unwrap();
    let mut cfg = PipelineConfig::new(64, seed);
    cfg.cache.capacity = 1024;
    let full = run(cfg.clone(), &gater, &trace);
    let cold = run(cfg.with_variant(Variant::NoCache), &gater, &trace);
    let pass = full.speedup >= SPEEDUP_BAND.0
        && full.speedup <= SPEEDUP_BAND.1
        && full.mean_quality >= cold.mean_quality - QUALITY_SLACK;
    verdict(
        pass,
        format!(
            "speedup {:.3} (band {:?}), quality {:.4} vs no-cache {:.4}, hit rate {:.3}",
            full.speedup, SPEEDUP_BAND, full.mean_quality, cold.mean_quality, full.hit_rate
        ),
    )
}

// 3. Cache size.

fn average_ranks(v: &[f64]) -> Vec<f64> {
    counted_ranks(v).iter().map(|r| r * (v.len() - 1) as f64).collect()
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn cache_size_trend() -> Verdict {
    let sizes: Vec<f64> = CACHE_SIZES.iter().map(|&c| c as f64).collect();
    let gater = BanditModel::new(ArmSet::default());
    let mut per_seed = Vec::new();
    let mut means = vec![0.0; CACHE_SIZES.len()];
    let seeds = 100..105u64;
    for seed in seeds.clone() {
        let trace = synth_workload(&WorkloadConfig {
            requests: 6000,
            seed,
            ..WorkloadConfig::default()
        })
        .unwrap();
        let quality: Vec<f64> = CACHE_SIZES
            .iter()
            .map(|&capacity| {
                let mut cfg = PipelineConfig::new(64, seed);
                cfg.cache.capacity = capacity;
                cfg.policy = SkipPolicy::Fixed(0.5);
                run(cfg, &gater, &trace).mean_quality
            })
            .collect();
        for (m, q) in means.iter_mut().zip(&quality) {
            *m += q / seeds.clone().count() as f64;
        }
        per_seed.push(spearman(&sizes, &quality));
    }
    let rho = spearman(&sizes, &means);
    verdict(
        rho >= MIN_SPEARMAN,
        format!(
            "mean quality {:.4?} at sizes {CACHE_SIZES:?}, spearman {rho:.3}, per seed {per_seed:.2?}",
            means
        ),
    )
}

// 4. Gater.

fn gater_learning() -> (Verdict, String) {
    let records = default_training_records(41).unwrap();
    let mut model = BanditModel::new(ArmSet::default());
    train_offline(&mut model, &records, &TrainOptions::default(), &mut seeded(42)).unwrap();
    let agreement = |contexts: &[reprise_core::simgen::SimContext]| {
        contexts
            .iter()
            .filter(|c| model.choose_arm(&c.features, Mode::Exploit).abs_diff(oracle_arm(c.sigma)) <= 1)
            .count()
    };
    let held_out = workload_contexts(
        &WorkloadConfig {
            seed: 977,
            ..WorkloadConfig::default()
        },
        500,
    )
    .unwrap();
    let agree = agreement(&held_out);
    let uniform = agreement(&sample_contexts(500, 64, (0.0, 1.0), 978).unwrap());

    let mut rng = seeded(43);
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for point in 0..50 {
        let mut m = BanditModel::new(ArmSet::default());
        for x in m.value.iter_mut().chain(m.uncertainty.iter_mut()).flatten() {
            *x = rng.random_range(-0.5..0.5);
        }
        let prepared = prepare(&records[point * 20..point * 20 + 20], &m, QualityTarget::Rank).unwrap();
        let g = batch_gradient(&m, &prepared);
        let arm = rng.random_range(0..14);
        let j = rng.random_range(0..FEATURE_DIM);
        for head in 0..2 {
            fn slot(m: &mut BanditModel, head: usize, arm: usize, j: usize) -> &mut f64 {
                if head == 0 { &mut m.value[arm][j] } else { &mut m.uncertainty[arm][j] }
            }
            let orig = *slot(&mut m, head, arm, j);
            *slot(&mut m, head, arm, j) = orig + h;
            let up = loss(&m, &prepared);
            *slot(&mut m, head, arm, j) = orig - h;
            let down = loss(&m, &prepared);
            *slot(&mut m, head, arm, j) = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = if head == 0 { g.value[arm][j] } else { g.uncertainty[arm][j] };
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
        }
    }
    let pass = agree as f64 >= ARM_AGREEMENT * 500.0 && worst < GRADIENT_TOLERANCE;
    (
        verdict(
            pass,
            format!("{agree}/500 held-out workload contexts within one arm of the oracle, worst gradient error {worst:.1e}"),
        ),
        format!("{uniform}/500 contexts with similarity uniform on [0, 1] within one arm of the oracle"),
    )
}

// 5. Vocoder.

const SR: u32 = 16_000;
const RATIOS: [f64; 5] = [0.67, 0.8, 1.0, 1.25, 1.5];
const TONES: [f64; 10] = [100.0, 150.0, 220.0, 330.0, 440.0, 660.0, 1000.0, 1500.0, 2500.0, 4000.0];

fn tone(freqs: &[f64], seconds: f64) -> AudioClip {
    let n = (seconds * f64::from(SR)).round() as usize;
    let amp = 0.8 / freqs.len() as f64;
    AudioClip::new(
        (0..n)
            .map(|i| {
                let t = i as f64 / f64::from(SR);
                freqs.iter().map(|f| amp * (2.0 * std::f64::consts::PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect(),
        SR,
    )
}

fn dominant_frequency(clip: &AudioClip) -> f64 {
    let trim = 2048.min(clip.len() / 4);
    let x = &clip.samples[trim..clip.len() - trim];
    let n = 1 << 17;
    let mut buf = vec![Complex::new(0.0f64, 0.0); n];
    for (i, &s) in x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / x.len() as f64).cos();
        buf[i] = Complex::new(f64::from(s) * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm().max(1e-300).ln()).collect();
    let k = (1..n / 2 - 1).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
    let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
    (k as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)) * f64::from(SR) / n as f64
}

fn vocoder() -> Verdict {
    let cfg = StftConfig::default();
    let mut worst_pitch: f64 = 0.0;
    let mut worst_len = 0i64;
    for &f in &TONES {
        let input = tone(&[f], 2.0);
        for &r in &RATIOS {
            let out = time_stretch(&input, 2.0 * r, &cfg).unwrap();
            worst_pitch = worst_pitch.max((dominant_frequency(&out) - f).abs() / f);
            let want = (2.0 * r * f64::from(SR)).round() as i64;
            worst_len = worst_len.max((out.len() as i64 - want).abs());
        }
    }
    let clip = tone(&[440.0, 1234.0], 1.5);
    let same = time_stretch(&clip, clip.duration(), &cfg).unwrap();
    let identity = if same.len() == clip.len() {
        same.samples.iter().zip(&clip.samples).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max)
    } else {
        f32::INFINITY
    };
    verdict(
        worst_pitch < PITCH_TOLERANCE && worst_len <= cfg.hop as i64 && identity <= IDENTITY_TOLERANCE,
        format!(
            "worst pitch error {worst_pitch:.1e}, worst length error {worst_len} samples (hop {}), identity error {identity:.1e}",
            cfg.hop
        ),
    )
}

// 6. Index recall.

fn brute_top(items: &[IndexedVector], q: &EmbeddingVector, k: usize) -> Vec<(EntryId, f64)> {
    let mut scored: Vec<(EntryId, f64)> = items
        .iter()
        .map(|it| (it.entry(), it.vector.iter().zip(q.values()).map(|(&a, b)| f64::from(a) * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn index_over(vectors: &[EmbeddingVector]) -> (Vec<IndexedVector>, IvfIndex) {
    let items: Vec<IndexedVector> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| IndexedVector::new(PyramidDescriptor::full(EntryId(i as u64), 5.0), v))
        .collect();
    let params = IndexParams {
        clusters: 64,
        nprobe: 8,
        seed: 5,
        ..IndexParams::default()
    };
    let index = IvfIndex::build(64, items.clone(), params).unwrap();
    (items, index)
}

fn recall(vectors: &[EmbeddingVector], queries: &[EmbeddingVector]) -> f64 {
    let (items, index) = index_over(vectors);
    let mut total = 0.0;
    for q in queries {
        let truth: HashSet<EntryId> = brute_top(&items, q, 10).into_iter().map(|t| t.0).collect();
        let got = index.search(q, 10, 8).unwrap();
        total += got.iter().filter(|h| truth.contains(&h.entry)).count() as f64 / 10.0;
    }
    total / queries.len() as f64
}

fn index_recall() -> (Verdict, String) {
    let mut rng = seeded(1);
    let space = PromptSpace::new(64, 64, 1.5, 2);
    let vectors: Vec<_> = (0..10_000).map(|_| space.sample(&mut rng)).collect();
    let queries: Vec<_> = (0..100).map(|_| space.sample(&mut rng)).collect();
    let clustered = recall(&vectors, &queries);

    let mut rng = seeded(3);
    let vectors: Vec<_> = (0..10_000).map(|_| EmbeddingVector::random(64, &mut rng)).collect();
    let queries: Vec<_> = (0..100).map(|_| EmbeddingVector::random(64, &mut rng)).collect();
    let isotropic = recall(&vectors, &queries);

    let (items, index) = index_over(&vectors);
    let exact = queries.iter().all(|q| {
        let got = index.search(q, 10, 64).unwrap();
        let want = brute_top(&items, q, 10);
        got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| g.entry == w.0 && (g.similarity - w.1).abs() < 1e-12)
    });
    (
        verdict(
            clustered >= MIN_RECALL && exact,
            format!("recall@10 {clustered:.3} on clustered prompts, exact at nprobe = C: {exact}"),
        ),
        format!("recall@10 {isotropic:.3} on isotropic random vectors"),
    )
}

// 7. Eviction.

fn eviction() -> Verdict {
    let mut rng = seeded(0xe71c);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let mut l = ImportanceLedger::new(DECAY, 0);
        for id in 0..n {
            l.track(EntryId(id as u64), 0.0);
        }
        let (events, now) = history(&mut rng, n);
        let mut last = vec![0.0; n];
        for &(id, s, d, t) in &events {
            l.record_reuse(EntryId(id as u64), s, d, t);
            last[id] = t;
        }
        let mut want: Vec<(f64, f64, u64)> = (0..n).map(|i| (event_sum(&events, i, now), last[i], i as u64)).collect();
        want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut order = Vec::new();
        while let Some(v) = l.victim(now, 1.0) {
            order.push(v.0);
            l.forget(v);
        }
        if order != want.iter().map(|w| w.2).collect::<Vec<_>>() {
            mismatches += 1;
        }
    }

    let mut worst: f64 = 0.0;
    let step = 0.01;
    for _ in 0..200 {
        let mut l = ImportanceLedger::new(DECAY, 0);
        l.track(EntryId(0), 0.0);
        let mut fine = 0.0;
        let mut tick = 0u32;
        for _ in 0..20 {
            let ticks = rng.random_range(0..100);
            for _ in 0..ticks {
                fine *= DECAY.powf(step);
            }
            tick += ticks;
            let (s, d) = (rng.random_range(0..140), rng.random_range(4.0..12.0));
            l.record_reuse(EntryId(0), s, d, f64::from(tick) * step);
            fine += f64::from(s) * d;
        }
        for _ in 0..250 {
            fine *= DECAY.powf(step);
        }
        let lazy = l.importance_at(EntryId(0), f64::from(tick + 250) * step).unwrap();
        if fine > 0.0 {
            worst = worst.max((lazy - fine).abs() / fine);
        }
    }
    verdict(
        mismatches == 0 && worst <= 1e-9,
        format!("{mismatches}/1000 eviction orders differ from the sorted oracle, lazy decay error {worst:.1e}"),
    )
}

// 8 and 9. Through the command line.

fn cli(args: &[&str], dir: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reprise"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn summary_of(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let last = text.lines().last().ok_or("empty report")?;
    let v: serde_json::Value = serde_json::from_str(last).map_err(|e| e.to_string())?;
    Ok(v["summary"].clone())
}

fn ablation(dir: &Path) -> Result<Verdict, String> {
    cli(&["synth-trace", "--prompts", "2000", "--dup-rate", "0.9", "--out", "trace.jsonl", "--seed", "3"], dir)?;
    let table = cli(
        &[
            "ablate", "--trace", "trace.jsonl", "--variant", "no-cache", "--variant", "rule-skip", "--variant", "no-rs",
            "--reports", "ablation",
        ],
        dir,
    )?;
    print!("{table}");
    let reward = |v: &str| -> Result<f64, String> {
        summary_of(&dir.join("ablation").join(format!("{v}.jsonl")))?["mean_reward"]
            .as_f64()
            .ok_or_else(|| format!("{v}: no reward"))
    };
    let (full, rule) = (reward("full")?, reward("rule-skip")?);
    let rows = table.lines().count() - 1;
    Ok(verdict(
        full >= rule && rows == 4,
        format!("{rows} variants, reward full {full:.4} vs rule-skip {rule:.4}"),
    ))
}

fn determinism(dir: &Path) -> Result<Verdict, String> {
    for name in ["first.jsonl", "second.jsonl"] {
        cli(&["replay", "--trace", "trace.jsonl", "--report", name, "--seed", "11"], dir)?;
    }
    let a = std::fs::read(dir.join("first.jsonl")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.join("second.jsonl")).map_err(|e| e.to_string())?;
    Ok(verdict(a == b && !a.is_empty(), format!("two replays, {} bytes each, identical: {}", a.len(), a == b)))
}

// Informational.

fn duplicate_rate_trend() -> (bool, String) {
    let gater = default_gater(0).unwrap();
    let rates = [0.0, 0.25, 0.5, 0.75, 1.0];
    let means: Vec<f64> = rates
        .iter()
        .map(|&r| {
            (100..105u64)
                .map(|seed| {
                    let trace = synth_workload(&WorkloadConfig {
                        requests: 400,
                        near_duplicate_rate: r,
                        seed,
                        ..WorkloadConfig::default()
                    })
                    .unwrap();
                    run(PipelineConfig::new(64, seed), &gater, &trace).hit_rate
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    (
        means.windows(2).all(|w| w[1] >= w[0]),
        format!("hit rate {means:.3?} at duplicate rates {rates:?}"),
    )
}

struct Line {
    id: &'static str,
    name: &'static str,
    budget: Duration,
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let lines = [
        Line { id: "1", name: "formula fidelity", budget: Duration::from_secs(10) },
        Line { id: "2", name: "speedup", budget: Duration::from_secs(120) },
        Line { id: "3", name: "cache size trend", budget: Duration::from_secs(300) },
        Line { id: "4", name: "gater learning", budget: Duration::from_secs(60) },
        Line { id: "5", name: "vocoder", budget: Duration::from_secs(30) },
        Line { id: "6", name: "index recall", budget: Duration::from_secs(30) },
        Line { id: "7", name: "eviction oracle", budget: Duration::from_secs(10) },
        Line { id: "8", name: "ablation", budget: Duration::MAX },
        Line { id: "9", name: "determinism", budget: Duration::MAX },
    ];
    let mut failed = 0;
    let mut infos = Vec::new();
    for line in &lines {
        let start = Instant::now();
        let v = match line.id {
            "1" => formula_fidelity(),
            "2" => speedup(),
            "3" => cache_size_trend(),
            "4" => {
                let (v, info) = gater_learning();
                infos.push(("gater", info));
                v
            }
            "5" => vocoder(),
            "6" => {
                let (v, info) = index_recall();
                infos.push(("index", info));
                v
            }
            "7" => eviction(),
            "8" => ablation(dir.path()).unwrap_or_else(|e| verdict(false, e)),
            _ => determinism(dir.path()).unwrap_or_else(|e| verdict(false, e)),
        };
        let elapsed = start.elapsed();
        let in_time = elapsed <= line.budget;
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let over = if in_time { String::new() } else { format!(", over the {:?} budget", line.budget) };
        println!(
            "{} {} {}: {} [{:.1} s{over}]",
            if pass { "PASS" } else { "FAIL" },
            line.id,
            line.name,
            v.detail,
            elapsed.as_secs_f64()
        );
    }
    for (name, info) in infos {
        println!("INFO {name}: {info}");
    }
    let (monotone, detail) = duplicate_rate_trend();
    println!(
        "{} hit rate non-decreasing in duplicate rate: {detail}",
        if monotone { "INFO" } else { "FAIL (not counted)" }
    );
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
