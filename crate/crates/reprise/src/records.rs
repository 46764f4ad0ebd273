//! Training records as line-delimited JSON.

use std::io::{BufRead, Write};

use anyhow::{anyhow, Context, Result};
use reprise_core::gater::TrainingRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    prompt: u64,
    features: Vec<f64>,
    quality: Vec<f64>,
    efficiency: Vec<f64>,
}

pub fn write_records<W: Write>(w: &mut W, records: &[TrainingRecord]) -> Result<()> {
    for r in records {
        let line = Line {
            prompt: r.prompt,
            features: r.features.clone(),
            quality: r.quality.clone(),
            efficiency: r.efficiency.clone(),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<TrainingRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.with_context(|| format!("line {}", n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line).map_err(|e| anyhow!("line {}: {e}", n + 1))?;
        if l.quality.len() != l.efficiency.len() {
            return Err(anyhow!("line {}: quality and efficiency lengths differ", n + 1));
        }
        out.push(TrainingRecord {
            prompt: l.prompt,
            features: l.features,
            quality: l.quality,
            efficiency: l.efficiency,
        });
    }
    Ok(out)
}
