//! `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys are errors. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use reprise_core::cache::CacheConfig;
use reprise_core::gater::Mode;
use reprise_core::index::IndexParams;
use reprise_core::pipeline::{PipelineConfig, SkipPolicy, Variant};
use reprise_core::vocoder::StftConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Simulated,
    /// Seeds the cache with WAV files from a directory.
    WavCorpus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub dim: usize,
    pub variant: Variant,
    pub mode: Mode,
    pub beta: f64,
    pub cache: CacheConfig,
    pub top_k: usize,
    pub temperature: f64,
    pub quality_threshold: f64,
    pub index: IndexParams,
    pub stft: StftConfig,
    pub refine_when_idle: bool,
    pub rule_threshold: f64,
    pub rule_skip: f64,
    /// Fixed skip on every hit; overrides the variant's policy.
    pub fixed_skip: Option<f64>,
    pub gater: Option<PathBuf>,
    pub backend: Backend,
    pub corpus: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    /// Cluster layout used to resolve `cluster_ref` trace records.
    pub trace_clusters: usize,
    pub trace_spread: f64,
    /// Idle time before the socket server runs refinement.
    pub idle_ms: u64,
}

impl Default for Config {
    fn default() -> Self {
        let base = PipelineConfig::new(reprise_core::embedding::DEFAULT_DIM, 0);
        Self {
            seed: 0,
            dim: reprise_core::embedding::DEFAULT_DIM,
            variant: Variant::Full,
            mode: Mode::Exploit,
            beta: 1.0,
            cache: base.cache,
            top_k: base.selector.top_k,
            temperature: base.selector.temperature,
            quality_threshold: base.selector.quality_threshold,
            index: base.index,
            stft: base.stft,
            refine_when_idle: true,
            rule_threshold: 0.35,
            rule_skip: 0.55,
            fixed_skip: None,
            gater: None,
            backend: Backend::Simulated,
            corpus: None,
            snapshot: None,
            trace_clusters: 32,
            trace_spread: 1.5,
            idle_ms: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("{key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {value:?}"),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            cfg.set(key.trim(), value.trim(), base)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "variant" => self.variant = Variant::parse(value).ok_or_else(|| anyhow!("unknown variant {value:?}"))?,
            "mode" => {
                self.mode = match value {
                    "exploit" => Mode::Exploit,
                    "explore" => Mode::Explore,
                    _ => bail!("mode: expected exploit or explore"),
                }
            }
            "beta" => self.beta = parse(key, value)?,
            "capacity" => self.cache.capacity = parse(key, value)?,
            "decay_per_hour" => self.cache.decay_per_hour = parse(key, value)?,
            "grace_hours" => self.cache.grace_hours = parse(key, value)?,
            "quality_floor" => self.cache.quality_floor = parse(key, value)?,
            "max_attempts" => self.cache.max_attempts = parse(key, value)?,
            "regenerations" => self.cache.regenerations = parse(key, value)?,
            "trigger_window" => self.cache.trigger_window = parse(key, value)?,
            "trigger_skip" => self.cache.trigger_skip = parse(key, value)?,
            "audit_capacity" => self.cache.audit_capacity = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "quality_threshold" => self.quality_threshold = parse(key, value)?,
            "clusters" => self.index.clusters = parse(key, value)?,
            "nprobe" => self.index.nprobe = parse(key, value)?,
            "min_granularity" => self.index.min_granularity = parse(key, value)?,
            "rebuild_every" => self.index.rebuild_every = parse(key, value)?,
            "stft_window" => self.stft.window = parse(key, value)?,
            "stft_hop" => self.stft.hop = parse(key, value)?,
            "refine_when_idle" => self.refine_when_idle = parse_bool(key, value)?,
            "rule_threshold" => self.rule_threshold = parse(key, value)?,
            "rule_skip" => self.rule_skip = parse(key, value)?,
            "fixed_skip" => self.fixed_skip = Some(parse(key, value)?),
            "gater" => self.gater = path(),
            "backend" => {
                self.backend = match value {
                    "simulated" => Backend::Simulated,
                    "wav-corpus" => Backend::WavCorpus,
                    _ => bail!("backend: expected simulated or wav-corpus"),
                }
            }
            "corpus" => self.corpus = path(),
            "snapshot" => self.snapshot = path(),
            "trace_clusters" => self.trace_clusters = parse(key, value)?,
            "trace_spread" => self.trace_spread = parse(key, value)?,
            "idle_ms" => self.idle_ms = parse(key, value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut p = PipelineConfig::new(self.dim, self.seed);
        p.cache = self.cache.clone();
        p.selector.top_k = self.top_k;
        p.selector.temperature = self.temperature;
        p.selector.quality_threshold = self.quality_threshold;
        p.index = IndexParams {
            seed: self.seed,
            ..self.index.clone()
        };
        p.stft = self.stft;
        p.refine_when_idle = self.refine_when_idle;
        p.policy = SkipPolicy::Gater(self.mode);
        p = p.with_variant(self.variant);
        if let SkipPolicy::Threshold { .. } = p.policy {
            p.policy = SkipPolicy::Threshold {
                threshold: self.rule_threshold,
                skip: self.rule_skip,
            };
        }
        if let Some(skip) = self.fixed_skip {
            p.policy = SkipPolicy::Fixed(skip);
        }
        p.validate()?;
        Ok(p)
    }
}
