use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use reprise::config::Config;
use reprise::report::{comparison_table, write_report, write_timings};
use reprise::{binary, records, setup, snapshot, trace};
use reprise_core::gater::{train_offline, ArmSet, BanditModel, QualityTarget, TrainOptions};
use reprise_core::pipeline::{replay, ReplayOptions, RunReport, Variant};
use reprise_core::rng::derive;
use reprise_core::simgen::{records_for_contexts, synth_workload, workload_contexts, QualityModel, WorkloadConfig};
use reprise_core::GenerationRequest;

#[derive(Parser)]
#[command(name = "reprise", version, about = "Warm-start cache for iterative-denoising audio generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace through the pipeline and write a report.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's variant.
        #[arg(long)]
        variant: Option<String>,
        /// Measured per-request overheads.
        #[arg(long)]
        timings: Option<PathBuf>,
        /// Save the final cache here.
        #[arg(long)]
        save_snapshot: Option<PathBuf>,
        #[arg(long)]
        no_refinement: bool,
    },
    /// Write a synthetic trace.
    SynthTrace {
        #[arg(long, default_value_t = 2000)]
        prompts: usize,
        #[arg(long, default_value_t = 0.9)]
        dup_rate: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        clusters: usize,
        #[arg(long, default_value_t = 0.25)]
        arrival_rate: f64,
        #[arg(long, default_value_t = 64)]
        dim: usize,
    },
    /// Write counterfactual training records from a synthetic workload.
    SynthRecords {
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a gater model offline.
    TrainGater {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Target::Rank)]
        target: Target,
    },
    /// Serve requests over TCP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay one trace under several variants and print a comparison.
    Ablate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Repeatable; the full variant is always included.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for one report per variant.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Rank,
    Raw,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_variant(name: &str) -> Result<Variant> {
    match Variant::parse(name) {
        Some(v) => Ok(v),
        None => {
            let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            bail!("unknown variant {name:?}; expected one of {}", names.join(", "))
        }
    }
}

fn load_trace(path: &Path, cfg: &Config) -> Result<Vec<GenerationRequest>> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    trace::read_trace(r, &setup::resolver(cfg)).with_context(|| format!("in {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn print_summary(report: &RunReport) {
    let s = &report.summary;
    eprintln!(
        "requests {}  hit rate {:.3}  speedup {:.3}  mean quality {:.4}  p50/p95 latency {:.3}/{:.3} s",
        s.requests, s.hit_rate, s.speedup, s.mean_quality, s.median_latency, s.p95_latency
    );
}

fn run_replay(
    trace_path: &Path,
    cfg: &Config,
    report_path: Option<&Path>,
    timings: Option<&Path>,
    save: Option<&Path>,
    options: ReplayOptions,
) -> Result<()> {
    let trace = load_trace(trace_path, cfg)?;
    let mut pipeline = setup::build_pipeline(cfg)?;
    if timings.is_some() {
        pipeline = pipeline.with_clock(Box::new(reprise::timing::WallClock::new()));
    }
    let report = replay(&mut pipeline, &trace, options)?;
    match report_path {
        Some(p) => {
            let mut w = create(p)?;
            write_report(&mut w, &report)?;
            w.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            write_report(&mut out, &report)?;
        }
    }
    if let Some(p) = timings {
        let mut w = create(p)?;
        write_timings(&mut w, &report)?;
        w.flush()?;
    }
    if let Some(dir) = save {
        std::fs::create_dir_all(dir)?;
        snapshot::save(pipeline.store(), dir)?;
    }
    print_summary(&report);
    Ok(())
}

fn run_ablate(trace_path: &Path, cfg: &Config, names: &[String], reports: Option<&Path>) -> Result<()> {
    let mut variants = vec![Variant::Full];
    for n in names {
        let v = parse_variant(n)?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    if names.is_empty() {
        variants = Variant::ALL.to_vec();
    }
    let trace = load_trace(trace_path, cfg)?;
    let gater = setup::load_gater(cfg)?;
    if let Some(dir) = reports {
        std::fs::create_dir_all(dir)?;
    }
    let mut runs = Vec::new();
    for v in variants {
        let vcfg = Config {
            variant: v,
            ..cfg.clone()
        };
        let mut pipeline = setup::build_with_gater(&vcfg, gater.clone())?;
        let report = replay(&mut pipeline, &trace, ReplayOptions::default())?;
        if let Some(dir) = reports {
            let mut w = create(&dir.join(format!("{}.jsonl", v.name())))?;
            write_report(&mut w, &report)?;
            w.flush()?;
        }
        runs.push((v.name(), report.summary));
    }
    let rows: Vec<(&str, &_)> = runs.iter().map(|(n, s)| (*n, s)).collect();
    print!("{}", comparison_table(&rows));
    Ok(())
}

fn run_serve(addr: &str, cfg: &Config) -> Result<()> {
    let pipeline = setup::build_pipeline(cfg)?.with_clock(Box::new(reprise::timing::WallClock::new()));
    let resolver = setup::resolver(cfg);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let state = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        io::stdout().flush()?;
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        reprise::server::serve(listener, pipeline, resolver, Duration::from_millis(cfg.idle_ms), shutdown).await
    })?;
    eprintln!("served {} requests", state.order.len());
    if let Some(dir) = &cfg.snapshot {
        std::fs::create_dir_all(dir)?;
        snapshot::save(state.pipeline.store(), dir)?;
        eprintln!("saved {} entries to {}", state.pipeline.store().len(), dir.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Replay {
            trace,
            config,
            report,
            seed,
            variant,
            timings,
            save_snapshot,
            no_refinement,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(v) = variant {
                cfg.variant = parse_variant(&v)?;
            }
            run_replay(
                &trace,
                &cfg,
                report.as_deref(),
                timings.as_deref(),
                save_snapshot.as_deref(),
                ReplayOptions { no_refinement },
            )
        }
        Command::SynthTrace {
            prompts,
            dup_rate,
            out,
            seed,
            clusters,
            arrival_rate,
            dim,
        } => {
            let trace = synth_workload(&WorkloadConfig {
                requests: prompts,
                near_duplicate_rate: dup_rate,
                clusters,
                arrival_rate,
                dim,
                seed,
                ..WorkloadConfig::default()
            })?;
            let mut w = create(&out)?;
            trace::write_trace(&mut w, &trace)?;
            w.flush()?;
            Ok(())
        }
        Command::SynthRecords { count, out, seed } => {
            let contexts = workload_contexts(
                &WorkloadConfig {
                    seed,
                    ..WorkloadConfig::default()
                },
                count,
            )?;
            let recs = records_for_contexts(&contexts, &QualityModel::default(), &ArmSet::default(), seed);
            let mut w = create(&out)?;
            records::write_records(&mut w, &recs)?;
            w.flush()?;
            Ok(())
        }
        Command::TrainGater {
            records: path,
            epochs,
            out,
            seed,
            target,
        } => {
            let recs = records::read_records(BufReader::new(
                File::open(&path).with_context(|| format!("opening {}", path.display()))?,
            ))?;
            let mut model = BanditModel::new(ArmSet::default());
            let options = TrainOptions {
                epochs,
                target: match target {
                    Target::Rank => QualityTarget::Rank,
                    Target::Raw => QualityTarget::Raw,
                },
            };
            let report = train_offline(&mut model, &recs, &options, &mut derive(seed, 0x6a7e))?;
            eprintln!(
                "trained on {} records: loss {:.5} -> {:.5}",
                recs.len(),
                report.initial_loss,
                report.final_loss()
            );
            let mut w = create(&out)?;
            binary::write_model(&mut w, &model)?;
            w.flush()?;
            Ok(())
        }
        Command::Serve { addr, config } => run_serve(&addr, &load_config(config.as_deref(), None)?),
        Command::Ablate {
            trace,
            config,
            variants,
            seed,
            reports,
        } => run_ablate(&trace, &load_config(config.as_deref(), seed)?, &variants, reports.as_deref()),
    }
}
