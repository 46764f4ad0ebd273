//! Line-delimited JSON request traces.
//!
//! Each line is one request. The prompt is either an explicit embedding
//! (`prompt_embedding`, base64 of little-endian `f32`) or a `cluster_ref`
//! resolved against a seeded [`PromptSpace`].

use std::io::{BufRead, Write};

use anyhow::{anyhow, bail, Context, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reprise_core::rng::derive;
use reprise_core::simgen::PromptSpace;
use reprise_core::types::DEFAULT_TOTAL_STEPS;
use reprise_core::{EmbeddingVector, GenerationRequest};
use serde::{Deserialize, Serialize};

use crate::binary::unit_from_f32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: u64,
    pub arrival_time_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_steps")]
    pub total_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_embedding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_ref: Option<usize>,
}

fn default_steps() -> u32 {
    DEFAULT_TOTAL_STEPS
}

pub fn encode_embedding(e: &EmbeddingVector) -> String {
    let bytes: Vec<u8> = e.to_f32().iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_embedding(s: &str) -> Result<EmbeddingVector> {
    let bytes = STANDARD.decode(s.trim()).context("prompt_embedding is not valid base64")?;
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        bail!("prompt_embedding holds {} bytes, not a whole number of f32 values", bytes.len());
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    unit_from_f32(&values)
}

/// Resolves `cluster_ref` records and checks prompt dimensions.
#[derive(Debug, Clone)]
pub struct Resolver {
    pub space: PromptSpace,
    pub seed: u64,
}

impl Resolver {
    pub fn new(clusters: usize, dim: usize, spread: f64, seed: u64) -> Self {
        Self {
            space: PromptSpace::new(clusters, dim, spread, seed),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn resolve(&self, rec: &TraceRecord) -> Result<GenerationRequest> {
        let prompt = match (&rec.prompt_embedding, rec.cluster_ref) {
            (Some(b64), None) => decode_embedding(b64)?,
            (None, Some(c)) => {
                if c >= self.space.centers.len() {
                    bail!("cluster_ref {c} out of range (have {})", self.space.centers.len());
                }
                self.space.around(c, &mut derive(self.seed, rec.id))
            }
            (Some(_), Some(_)) => bail!("record has both prompt_embedding and cluster_ref"),
            (None, None) => bail!("record needs prompt_embedding or cluster_ref"),
        };
        if prompt.dim() != self.dim() {
            bail!("prompt has dimension {}, expected {}", prompt.dim(), self.dim());
        }
        let req = GenerationRequest {
            id: rec.id,
            prompt,
            duration: rec.duration_s,
            total_steps: rec.total_steps,
            arrival_time: rec.arrival_time_s,
        };
        req.validate()?;
        Ok(req)
    }
}

/// Parses one trace line.
pub fn parse_line(line: &str, resolver: &Resolver) -> Result<GenerationRequest> {
    let rec: TraceRecord = serde_json::from_str(line)?;
    resolver.resolve(&rec)
}

/// Reads a whole trace; the first bad line aborts with its line number.
pub fn read_trace<R: BufRead>(r: R, resolver: &Resolver) -> Result<Vec<GenerationRequest>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.with_context(|| format!("line {}", n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, resolver).map_err(|e| anyhow!("line {}: {e:#}", n + 1))?);
    }
    Ok(out)
}

pub fn record_for(req: &GenerationRequest) -> TraceRecord {
    TraceRecord {
        id: req.id,
        arrival_time_s: req.arrival_time,
        duration_s: req.duration,
        total_steps: req.total_steps,
        prompt_embedding: Some(encode_embedding(&req.prompt)),
        cluster_ref: None,
    }
}

pub fn write_trace<W: Write>(w: &mut W, trace: &[GenerationRequest]) -> Result<()> {
    for req in trace {
        serde_json::to_writer(&mut *w, &record_for(req))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
