//! Batch runner for the chunking RNN experiments: configuration, seeded
//! replicates, metric export and run comparison.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod experiments;
pub mod gradcheck;
pub mod manifest;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;

use config::{ExperimentConfig, RawConfig};
use experiments::Runner;
use manifest::Manifest;
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "chunkrnn", version, about = "Run chunking RNN experiments")]
pub struct Cli {
    /// One of: generate, naive, ablate, chunked, constant-tag, transfer,
    /// analyze, compare, gradcheck.
    pub experiment: String,
    /// Two manifests or run directories (compare only).
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for replicates (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// How a completed invocation ended.
#[derive(Debug)]
pub struct Completed {
    pub manifest: Manifest,
    /// Set when the run finished but its checks did not pass.
    pub failure: Option<String>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut raw = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RawConfig::parse(&text).with_context(|| format!("{}", path.display()))?
        }
        None => RawConfig::default(),
    };
    if let Some(name) = raw.raw("experiment") {
        if name != cli.experiment {
            bail!(
                "config is for experiment `{name}` but `{}` was requested",
                cli.experiment
            );
        }
    }
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        let line = format!("{} = {}", k.trim(), v.trim());
        let single = RawConfig::parse(&line).with_context(|| format!("--set {kv}"))?;
        raw.set(k.trim(), single.raw(k.trim()).unwrap_or_default().to_string());
    }
    if let Some(seed) = cli.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(n) = cli.replicates {
        raw.set("replicates", n.to_string());
    }
    ExperimentConfig::resolve(&cli.experiment, &raw).map_err(|e| match &cli.config {
        Some(path) => anyhow!("{}: {e}", path.display()),
        None => anyhow!(e),
    })
}

pub fn run(cli: &Cli) -> Result<Completed> {
    let cfg = load_config(cli)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        bail!("--jobs must be positive");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let mut out = OutputDir::create(&cli.out)?;
    let start = Instant::now();
    let result = (|| -> Result<Completed> {
        let record = Runner {
            cfg: &cfg,
            out: &mut out,
            pool: &pool,
            inputs: &cli.inputs,
        }
        .run()?;
        let echo = cfg.echo();
        out.write("config.txt", config::render(&echo).as_bytes())?;
        let mut files: Vec<String> = out
            .files()
            .iter()
            .filter_map(|p| p.strip_prefix(out.root()).ok())
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        files.push(manifest::FILE_NAME.to_string());
        let manifest = Manifest {
            experiment: cfg.experiment.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            root_seed: cfg.seed,
            replicates: record.replicates,
            config: echo,
            files,
            metrics: record.metrics,
            jobs,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        };
        out.write(
            manifest::FILE_NAME,
            (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
        )?;
        Ok(Completed {
            manifest,
            failure: record.failure,
        })
    })();
    if result.is_err() {
        out.rollback();
    }
    result
}
