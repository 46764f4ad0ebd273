//! Replay reports: one JSON line per request, then one summary line.
//!
//! Everything in the report is a function of the trace, config and seed.
//! Measured wall-clock overheads go to a separate timings file.

use std::io::Write;

use anyhow::Result;
use reprise_core::pipeline::{RunReport, RunSummary};
use reprise_core::ServeOutcome;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct OutcomeLine {
    pub id: u64,
    pub cache_hit: bool,
    pub entry: Option<u64>,
    pub arm: usize,
    pub skip_fraction: f64,
    pub steps_skipped: u32,
    pub total_steps: u32,
    pub nfe: u32,
    pub quality: f64,
    pub service_time: f64,
    pub queue_delay: f64,
    pub latency: f64,
    pub fallback: Option<&'static str>,
}

impl From<&ServeOutcome> for OutcomeLine {
    fn from(o: &ServeOutcome) -> Self {
        Self {
            id: o.request_id,
            cache_hit: o.cache_hit,
            entry: o.entry.map(|e| e.0),
            arm: o.arm,
            skip_fraction: o.skip_fraction,
            steps_skipped: o.steps_skipped,
            total_steps: o.total_steps,
            nfe: o.nfe,
            quality: o.quality,
            service_time: o.service_time,
            queue_delay: o.queue_delay,
            latency: o.latency(),
            fallback: o.fallback,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SummaryLine {
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
    pub speedup: f64,
    pub mean_quality: f64,
    pub mean_skip: f64,
    pub mean_reward: f64,
    pub fallbacks: usize,
    pub refinements: usize,
    pub refinement_time: f64,
    pub final_cache_size: usize,
}

impl From<&RunSummary> for SummaryLine {
    fn from(s: &RunSummary) -> Self {
        Self {
            requests: s.requests,
            hits: s.hits,
            hit_rate: s.hit_rate,
            mean_latency: s.mean_latency,
            median_latency: s.median_latency,
            p95_latency: s.p95_latency,
            mean_queue_delay: s.mean_queue_delay,
            mean_service_time: s.mean_service_time,
            total_nfe: s.total_nfe,
            baseline_nfe: s.baseline_nfe,
            total_nfe_time: s.total_nfe_time,
            baseline_nfe_time: s.baseline_nfe_time,
            speedup: s.speedup,
            mean_quality: s.mean_quality,
            mean_skip: s.mean_skip,
            mean_reward: s.mean_reward,
            fallbacks: s.fallbacks,
            refinements: s.refinements,
            refinement_time: s.refinement_time,
            final_cache_size: s.final_cache_size,
        }
    }
}

#[derive(Serialize)]
struct Tagged<'a> {
    summary: &'a SummaryLine,
}

pub fn write_report<W: Write>(w: &mut W, report: &RunReport) -> Result<()> {
    for o in &report.outcomes {
        serde_json::to_writer(&mut *w, &OutcomeLine::from(o))?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut *w,
        &Tagged {
            summary: &SummaryLine::from(&report.summary),
        },
    )?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct TimingLine {
    id: u64,
    wall_overhead_s: f64,
}

#[derive(Serialize)]
struct TimingSummary {
    mean_wall_overhead_s: f64,
    max_wall_overhead_s: f64,
}

/// Measured selector and gater wall time per request.
pub fn write_timings<W: Write>(w: &mut W, report: &RunReport) -> Result<()> {
    for o in &report.outcomes {
        serde_json::to_writer(
            &mut *w,
            &TimingLine {
                id: o.request_id,
                wall_overhead_s: o.wall_overhead,
            },
        )?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut *w,
        &TimingSummary {
            mean_wall_overhead_s: report.summary.mean_wall_overhead,
            max_wall_overhead_s: report.summary.max_wall_overhead,
        },
    )?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Fixed-width comparison table, one row per variant.
pub fn comparison_table(rows: &[(&str, &RunSummary)]) -> String {
    let mut out = format!(
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
        "variant", "hit", "speedup", "quality", "skip", "reward", "p50_lat", "p95_lat"
    );
    for (name, s) in rows {
        out.push_str(&format!(
            "{:<10} {:>8.3} {:>8.3} {:>8.4} {:>8.3} {:>8.4} {:>10.3} {:>10.3}\n",
            name, s.hit_rate, s.speedup, s.mean_quality, s.mean_skip, s.mean_reward, s.median_latency, s.p95_latency
        ));
    }
    out
}
