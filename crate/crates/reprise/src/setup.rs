//! Building a ready-to-serve pipeline from a [`Config`].

use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context, Result};
use reprise_core::gater::BanditModel;
use reprise_core::pipeline::{default_gater, Pipeline};
use reprise_core::simgen::SimGenerator;

use crate::binary::read_model;
use crate::config::{Backend, Config};
use crate::trace::Resolver;

pub fn load_gater(cfg: &Config) -> Result<BanditModel> {
    let mut model = match &cfg.gater {
        Some(path) => {
            let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
            read_model(&mut r).with_context(|| format!("reading {}", path.display()))?
        }
        None => default_gater(cfg.seed)?,
    };
    model.beta = cfg.beta;
    Ok(model)
}

/// Pipeline with its gater, plus a restored snapshot or a seeded corpus when
/// the config asks for one. A snapshot that exists takes precedence over
/// corpus seeding.
pub fn build_pipeline(cfg: &Config) -> Result<Pipeline<SimGenerator>> {
    build_with_gater(cfg, load_gater(cfg)?)
}

pub fn build_with_gater(cfg: &Config, gater: BanditModel) -> Result<Pipeline<SimGenerator>> {
    let pc = cfg.pipeline_config()?;
    let index = pc.index.clone();
    let mut pipeline = Pipeline::new(pc, gater, SimGenerator::default())?;
    let restored = match &cfg.snapshot {
        Some(dir) if dir.join("manifest.jsonl").exists() => {
            crate::snapshot::load(pipeline.store_mut(), dir, index)
                .with_context(|| format!("loading snapshot {}", dir.display()))?;
            log::info!("restored {} entries from {}", pipeline.store().len(), dir.display());
            true
        }
        _ => false,
    };
    if cfg.backend == Backend::WavCorpus && !restored {
        let Some(dir) = &cfg.corpus else {
            bail!("backend wav-corpus needs a corpus directory");
        };
        let n = crate::corpus::seed_cache(pipeline.store_mut(), dir, cfg.dim, cfg.seed)?;
        log::info!("seeded {n} entries from {}", dir.display());
    }
    Ok(pipeline)
}

pub fn resolver(cfg: &Config) -> Resolver {
    Resolver::new(cfg.trace_clusters, cfg.dim, cfg.trace_spread, cfg.seed)
}
