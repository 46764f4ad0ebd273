//! Trace replay on a single-server queue with a simulated clock.

use alloc::vec::Vec;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

use super::{CostModel, Pipeline};
use crate::error::Result;
use crate::gater::{reward, ALPHA};
use crate::simgen::Generator;
use crate::types::{GenerationRequest, ServeOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplayOptions {
    /// Skip idle-time refinement even if the pipeline enables it.
    pub no_refinement: bool,
}

/// Aggregates over one replay. Times are simulated seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub requests: usize,
    pub hits: usize,
    pub hit_rate: f64,
    pub mean_latency: f64,
    pub median_latency: f64,
    pub p95_latency: f64,
    pub mean_queue_delay: f64,
    pub mean_service_time: f64,
    pub total_nfe: u64,
    pub baseline_nfe: u64,
    pub total_nfe_time: f64,
    pub baseline_nfe_time: f64,
    /// `baseline_nfe_time / total_nfe_time`.
    pub speedup: f64,
    pub mean_quality: f64,
    pub mean_skip: f64,
    /// Mean of `alpha * skip + (1 - alpha) * quality`.
    pub mean_reward: f64,
    pub fallbacks: usize,
    pub refinements: usize,
    pub refinement_time: f64,
    pub final_cache_size: usize,
    /// Measured wall time; not deterministic.
    pub mean_wall_overhead: f64,
    pub max_wall_overhead: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outcomes: Vec<ServeOutcome>,
    pub summary: RunSummary,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl RunSummary {
    pub fn from_outcomes<C: CostModel + ?Sized>(outcomes: &[ServeOutcome], trace: &[GenerationRequest], cost: &C) -> Self {
        let n = outcomes.len();
        let hits = outcomes.iter().filter(|o| o.cache_hit).count();
        let mut latencies: Vec<f64> = outcomes.iter().map(ServeOutcome::latency).collect();
        latencies.sort_by(f64::total_cmp);
        let total_nfe_time: f64 = outcomes.iter().map(|o| o.service_time).sum();
        let baseline_nfe_time: f64 = trace.iter().map(|r| cost.nfe_time(r.total_steps, r.duration)).sum();
        Self {
            requests: n,
            hits,
            hit_rate: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            mean_latency: mean(latencies.iter().copied()),
            median_latency: percentile(&latencies, 0.5),
            p95_latency: percentile(&latencies, 0.95),
            mean_queue_delay: mean(outcomes.iter().map(|o| o.queue_delay)),
            mean_service_time: mean(outcomes.iter().map(|o| o.service_time)),
            total_nfe: outcomes.iter().map(|o| u64::from(o.nfe)).sum(),
            baseline_nfe: trace.iter().map(|r| u64::from(r.total_steps)).sum(),
            total_nfe_time,
            baseline_nfe_time,
            speedup: if total_nfe_time > 0.0 { baseline_nfe_time / total_nfe_time } else { 1.0 },
            mean_quality: mean(outcomes.iter().map(|o| o.quality)),
            mean_skip: mean(outcomes.iter().map(|o| o.skip_fraction)),
            mean_reward: mean(outcomes.iter().map(|o| reward(o.skip_fraction, o.quality, ALPHA))),
            fallbacks: outcomes.iter().filter(|o| o.fallback.is_some()).count(),
            mean_wall_overhead: mean(outcomes.iter().map(|o| o.wall_overhead)),
            max_wall_overhead: outcomes.iter().map(|o| o.wall_overhead).fold(0.0, f64::max),
            ..Self::default()
        }
    }
}

/// Replays `trace` in arrival order. A request starts when it has arrived
/// and the previous one has finished; queued cache events are applied after
/// each request, and idle gaps before the next arrival are used for
/// refinement.
pub fn replay<G: Generator + CostModel>(
    pipeline: &mut Pipeline<G>,
    trace: &[GenerationRequest],
    options: ReplayOptions,
) -> Result<RunReport> {
    let mut order: Vec<&GenerationRequest> = trace.iter().collect();
    order.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
    let refine = pipeline.config().refine_when_idle && !options.no_refinement;
    let mut free_at = 0.0f64;
    let mut refinement_time = 0.0;
    let mut outcomes = Vec::with_capacity(order.len());
    for (i, req) in order.iter().enumerate() {
        let start = free_at.max(req.arrival_time);
        let mut outcome = pipeline.handle_request(req, start)?;
        outcome.queue_delay = start - req.arrival_time;
        free_at = start + outcome.service_time;
        pipeline.flush()?;
        if refine {
            if let Some(next) = order.get(i + 1) {
                if next.arrival_time > free_at {
                    let used = pipeline.refine_idle(next.arrival_time - free_at, req.total_steps)?;
                    free_at += used;
                    refinement_time += used;
                }
            }
        }
        outcomes.push(outcome);
    }
    let sorted: Vec<GenerationRequest> = order.into_iter().cloned().collect();
    let mut summary = RunSummary::from_outcomes(&outcomes, &sorted, pipeline.generator());
    summary.refinements = pipeline.refinements().len();
    summary.refinement_time = refinement_time;
    summary.final_cache_size = pipeline.store().len();
    Ok(RunReport { outcomes, summary })
}
