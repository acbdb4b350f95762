//! `volecgi`: file-based front end to the imaging pipeline.
//!
//! Every subcommand reads one TOML run configuration (`--config`), applies
//! `--section.key value` overrides, writes its artifacts into `--out` and
//! records a `run.toml` there.

mod commands;
mod config;
mod error;
mod files;
mod provenance;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_overrides, resolve, RunConfig};
use crate::error::{usage, CliResult};
use crate::provenance::RunRecord;

#[derive(Parser)]
#[command(name = "volecgi", version, about = "Epicardial and volumetric ECG imaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic torso/heart case.
    Phantom(Flags),
    /// Notch, band-limit and re-reference a signal CSV.
    Preprocess(Flags),
    /// Assemble the heart-surface transfer matrix.
    ForwardEpi(Flags),
    /// Assemble the volumetric transfer matrix.
    ForwardVol(Flags),
    /// Regularized inversion of a signal with a cached operator.
    Invert(Flags),
    /// Activation times of reconstructed sources.
    Lat(Flags),
    /// Earliest-activation site, with errors against a phantom truth.
    Localize(Flags),
    /// Segment infarct metrics from an activation map.
    Metrics(Flags),
    /// Epicardial vs volumetric comparison on the phantom suite.
    Bench(Flags),
}

#[derive(Args)]
struct Flags {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed for phantom and bench.
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides: `--section.key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

type Handler = fn(&RunConfig, &mut RunRecord) -> CliResult<()>;

impl Command {
    fn split(self) -> (&'static str, Handler, Flags) {
        match self {
            Command::Phantom(f) => ("phantom", commands::phantom, f),
            Command::Preprocess(f) => ("preprocess", commands::preprocess_signals, f),
            Command::ForwardEpi(f) => ("forward-epi", commands::forward_epi, f),
            Command::ForwardVol(f) => ("forward-vol", commands::forward_vol, f),
            Command::Invert(f) => ("invert", commands::invert, f),
            Command::Lat(f) => ("lat", commands::lat, f),
            Command::Localize(f) => ("localize", commands::localize, f),
            Command::Metrics(f) => ("metrics", commands::metrics, f),
            Command::Bench(f) => ("bench", commands::bench, f),
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let (name, handler, flags) = cli.command.split();
    let (late_config, mut overrides) = parse_overrides(&flags.overrides)?;
    let mut globals = Vec::new();
    if let Some(out) = &flags.out {
        let out = out.to_str().ok_or_else(|| usage("--out must be valid UTF-8"))?;
        globals.push(("out".to_string(), toml::Value::String(out.to_string()).to_string()));
    }
    if let Some(w) = flags.workers {
        globals.push(("workers".to_string(), w.to_string()));
    }
    if let Some(s) = flags.seed {
        if s > i64::MAX as u64 {
            return Err(usage(format!("--seed must be below 2^63, got {s}")));
        }
        globals.push(("seed".to_string(), s.to_string()));
    }
    globals.append(&mut overrides);
    let config_path = flags.config.or(late_config);
    let cfg = resolve(config_path.as_deref(), &globals)?;
    if cfg.workers > 0 {
        // only fails when a pool exists already, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| usage(format!("cannot create {}: {e}", cfg.out.display())))?;
    let mut run = RunRecord::new(name, &cfg.out);
    handler(&cfg, &mut run)?;
    run.finish(&cfg)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VOLECGI_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
