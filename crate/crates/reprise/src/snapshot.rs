//! Cache snapshots.
//!
//! A snapshot is a directory:
//!
//! ```text
//! manifest.jsonl     header line, then one line per entry (id order)
//! embeddings.swem    output embedding per entry
//! prompts.swem       prompt embedding per entry
//! provenance.swem    provenance prompt per entry
//! segments.swem      every segment embedding, entries in manifest order
//! index.swix         the IVF index
//! payload/<id>.wav   32-bit float latent payload
//! ```
//!
//! Embeddings are stored as `f32`; the index stores `f32` already, so a
//! restored store answers searches exactly as the saved one did.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use reprise_core::cache::{CacheEntry, CacheStore, ImportanceRecord};
use reprise_core::index::{IndexParams, PyramidDescriptor};
use reprise_core::simgen::{Provenance, SimClip};
use reprise_core::{EmbeddingVector, EntryId};
use serde::{Deserialize, Serialize};

use crate::binary::{read_embeddings, read_index, write_embeddings, write_index};
use crate::wav;

const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dim: usize,
    entries: usize,
    next_id: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Segment {
    level: u8,
    start: f32,
    length: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: u64,
    duration: f64,
    importance: f64,
    last_update: f64,
    inserted_at: f64,
    attempts: u32,
    quality: f64,
    reuse_count: u64,
    recent_skips: Vec<f64>,
    skip_fraction: f64,
    seed: u64,
    sample_rate: u32,
    segments: Vec<Segment>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

pub fn save(store: &CacheStore, dir: &Path) -> Result<()> {
    let payload = dir.join("payload");
    if payload.exists() {
        fs::remove_dir_all(&payload).with_context(|| format!("clearing {}", payload.display()))?;
    }
    fs::create_dir_all(&payload).with_context(|| format!("creating {}", payload.display()))?;

    let entries: Vec<&CacheEntry> = store.entries().collect();
    let mut manifest = create(&dir.join("manifest.jsonl"))?;
    serde_json::to_writer(
        &mut manifest,
        &Header {
            version: VERSION,
            dim: store.index().dim(),
            entries: entries.len(),
            next_id: store.next_id(),
        },
    )?;
    manifest.write_all(b"\n")?;
    for e in &entries {
        let record = store
            .ledger()
            .get(e.id)
            .with_context(|| format!("entry {} has no importance record", e.id))?;
        let line = ManifestLine {
            id: e.id.0,
            duration: e.clip.duration,
            importance: record.value,
            last_update: record.last_update,
            inserted_at: record.inserted_at,
            attempts: e.attempts,
            quality: e.quality,
            reuse_count: e.reuse_count,
            recent_skips: e.recent_skips.iter().copied().collect(),
            skip_fraction: e.clip.provenance.skip_fraction,
            seed: e.clip.provenance.seed,
            sample_rate: e.clip.latent.sample_rate,
            segments: e
                .segments
                .iter()
                .map(|s| Segment {
                    level: s.level,
                    start: s.start,
                    length: s.length,
                })
                .collect(),
        };
        serde_json::to_writer(&mut manifest, &line)?;
        manifest.write_all(b"\n")?;
        wav::write_f32(&payload.join(format!("{}.wav", e.id)), &e.clip.latent)?;
    }
    manifest.flush()?;

    let rows = |f: &dyn Fn(&CacheEntry) -> EmbeddingVector| entries.iter().map(|e| f(e)).collect::<Vec<_>>();
    for (name, data) in [
        ("embeddings.swem", rows(&|e| e.clip.embedding.clone())),
        ("prompts.swem", rows(&|e| e.prompt.clone())),
        ("provenance.swem", rows(&|e| e.clip.provenance.prompt.clone())),
    ] {
        let mut w = create(&dir.join(name))?;
        write_embeddings(&mut w, &data)?;
        w.flush()?;
    }
    let segments: Vec<EmbeddingVector> = entries.iter().flat_map(|e| e.segment_embeddings.iter().cloned()).collect();
    let mut w = create(&dir.join("segments.swem"))?;
    write_embeddings(&mut w, &segments)?;
    w.flush()?;

    let mut w = create(&dir.join("index.swix"))?;
    write_index(&mut w, store.index())?;
    w.flush()?;
    Ok(())
}

/// Loads a snapshot into `store`, which must be empty.
pub fn load(store: &mut CacheStore, dir: &Path, params: IndexParams) -> Result<()> {
    ensure!(store.is_empty(), "snapshots load into an empty cache");
    let mut lines = open(&dir.join("manifest.jsonl"))?.lines();
    let header: Header = match lines.next() {
        Some(l) => serde_json::from_str(&l?).context("manifest header")?,
        None => bail!("empty manifest"),
    };
    ensure!(header.version == VERSION, "unsupported snapshot version {}", header.version);
    ensure!(
        header.dim == store.index().dim(),
        "snapshot dimension {} does not match configured {}",
        header.dim,
        store.index().dim()
    );
    let mut manifest = Vec::with_capacity(header.entries);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).with_context(|| format!("manifest line {}", n + 2))?;
        manifest.push(m);
    }
    ensure!(
        manifest.len() == header.entries,
        "manifest lists {} entries, header says {}",
        manifest.len(),
        header.entries
    );
    let read = |name: &str| -> Result<Vec<EmbeddingVector>> {
        let rows = read_embeddings(&mut open(&dir.join(name))?).with_context(|| name.to_string())?;
        Ok(rows)
    };
    let embeddings = read("embeddings.swem")?;
    let prompts = read("prompts.swem")?;
    let provenance = read("provenance.swem")?;
    let mut segments = read("segments.swem")?.into_iter();
    for (name, rows) in [("embeddings", &embeddings), ("prompts", &prompts), ("provenance", &provenance)] {
        ensure!(rows.len() == manifest.len(), "{name}.swem has {} rows for {} entries", rows.len(), manifest.len());
    }

    for (i, m) in manifest.into_iter().enumerate() {
        let id = EntryId(m.id);
        let latent = wav::read(&dir.join("payload").join(format!("{id}.wav")))?;
        ensure!(latent.sample_rate == m.sample_rate, "entry {id}: payload sample rate differs from manifest");
        let segment_embeddings: Vec<EmbeddingVector> = segments.by_ref().take(m.segments.len()).collect();
        ensure!(segment_embeddings.len() == m.segments.len(), "segments.swem is short");
        let entry = CacheEntry {
            id,
            clip: SimClip {
                latent,
                embedding: embeddings[i].clone(),
                duration: m.duration,
                provenance: Provenance {
                    prompt: provenance[i].clone(),
                    skip_fraction: m.skip_fraction,
                    seed: m.seed,
                },
            },
            prompt: prompts[i].clone(),
            quality: m.quality,
            segments: m
                .segments
                .iter()
                .map(|s| PyramidDescriptor {
                    entry: id,
                    level: s.level,
                    start: s.start,
                    length: s.length,
                })
                .collect(),
            segment_embeddings,
            attempts: m.attempts,
            reuse_count: m.reuse_count,
            recent_skips: m.recent_skips.into_iter().collect::<VecDeque<_>>(),
        };
        store.restore(
            entry,
            ImportanceRecord {
                value: m.importance,
                last_update: m.last_update,
                inserted_at: m.inserted_at,
            },
        )?;
    }
    ensure!(segments.next().is_none(), "segments.swem has extra rows");
    let index = read_index(&mut open(&dir.join("index.swix"))?, params)?;
    store.replace_index(index)?;
    store.reserve_ids(header.next_id);
    Ok(())
}
