//! `pqx`: generate data, train posteriors, explain, evaluate and render.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use config::{RawConfig, RunConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "pqx", version, about = "Explanation distributions for Bayesian power-quality classifiers")]
struct Cli {
    /// Plain-text `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (required here or in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for every artefact.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads for the parallel stages (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise the train, validation and test splits.
    Generate,
    /// Train networks and build the configured posteriors.
    Train {
        /// Number of deep-ensemble members.
        #[arg(long)]
        ensemble: Option<usize>,
        /// Posteriors to build (repeatable or comma-separated).
        #[arg(long = "posterior", value_delimiter = ',')]
        posteriors: Vec<String>,
    },
    /// Sample explanation distributions for selected records.
    Explain {
        #[arg(long)]
        split: Option<String>,
        /// Record positions within the split (repeatable or comma-separated).
        #[arg(long = "instance", value_delimiter = ',')]
        instances: Vec<String>,
        #[arg(long)]
        posterior: Option<String>,
        #[arg(long)]
        operator: Option<String>,
        /// Summary maps to store (repeatable or comma-separated).
        #[arg(long = "summary", value_delimiter = ',')]
        summaries: Vec<String>,
        /// Attributed class: `true` or `predicted`.
        #[arg(long)]
        target: Option<String>,
    },
    /// Score the posterior by operator by summary grid on the test splits.
    Eval {
        #[arg(long = "posterior", value_delimiter = ',')]
        posteriors: Vec<String>,
        #[arg(long = "operator", value_delimiter = ',')]
        operators: Vec<String>,
        #[arg(long = "summary", value_delimiter = ',')]
        summaries: Vec<String>,
        /// Instances per disturbance class and split (`all` for every one).
        #[arg(long)]
        max_per_class: Option<String>,
        #[arg(long)]
        target: Option<String>,
    },
    /// Render SVG panels for every results bundle in a directory.
    Report {
        /// Directory of bundles (defaults to `<out_dir>/explain`).
        dir: Option<PathBuf>,
    },
    /// Convert external recordings into an unlabelled split.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Declared fundamental frequency in Hz.
        #[arg(long)]
        fundamental: Option<f64>,
        /// Sample rate for single-column input.
        #[arg(long)]
        sample_rate: Option<f64>,
    },
}

fn set_list(raw: &mut RawConfig, key: &str, values: &[String]) -> Result<(), UsageError> {
    if values.is_empty() {
        return Ok(());
    }
    raw.set(key, &values.join(","))
}

fn set_opt<T: ToString>(raw: &mut RawConfig, key: &str, value: &Option<T>) -> Result<(), UsageError> {
    match value {
        Some(v) => raw.set(key, &v.to_string()),
        None => Ok(()),
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(cli: &Cli) -> Result<RawConfig, UsageError> {
    let mut raw = RawConfig::default();
    if let Some(path) = &cli.config {
        raw.merge_file(path)?;
    }
    for a in &cli.set {
        raw.merge_assignment(a)?;
    }
    set_opt(&mut raw, "seed", &cli.seed)?;
    set_opt(&mut raw, "out_dir", &cli.out_dir.as_ref().map(|p| p.display()))?;
    set_opt(&mut raw, "threads", &cli.threads)?;
    match &cli.command {
        Command::Generate | Command::Report { .. } => {}
        Command::Train { ensemble, posteriors } => {
            set_opt(&mut raw, "train.ensemble_members", ensemble)?;
            set_list(&mut raw, "train.posteriors", posteriors)?;
        }
        Command::Explain { split, instances, posterior, operator, summaries, target } => {
            set_opt(&mut raw, "explain.split", split)?;
            set_list(&mut raw, "explain.instances", instances)?;
            set_opt(&mut raw, "explain.posterior", posterior)?;
            set_opt(&mut raw, "explain.operator", operator)?;
            set_list(&mut raw, "explain.summaries", summaries)?;
            set_opt(&mut raw, "explain.target", target)?;
        }
        Command::Eval { posteriors, operators, summaries, max_per_class, target } => {
            set_list(&mut raw, "eval.posteriors", posteriors)?;
            set_list(&mut raw, "eval.operators", operators)?;
            set_list(&mut raw, "eval.summaries", summaries)?;
            set_opt(&mut raw, "eval.max_per_class", max_per_class)?;
            set_opt(&mut raw, "eval.target", target)?;
        }
        Command::Ingest { name, fundamental, sample_rate, .. } => {
            set_opt(&mut raw, "ingest.name", name)?;
            set_opt(&mut raw, "ingest.fundamental_hz", fundamental)?;
            set_opt(&mut raw, "ingest.sample_rate_hz", sample_rate)?;
        }
    }
    Ok(raw)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let raw = resolve(&cli)?;
    let cfg = RunConfig::from_raw(&raw)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let ctx = commands::Context { raw, cfg };
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train { .. } => commands::train(&ctx),
        Command::Explain { .. } => commands::explain(&ctx),
        Command::Eval { .. } => commands::eval(&ctx),
        Command::Report { dir } => commands::report(&ctx, dir),
        Command::Ingest { inputs, .. } => commands::ingest(&ctx, &inputs),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.downcast_ref::<UsageError>().is_some()
        || matches!(err.downcast_ref::<pqx_core::Error>(), Some(pqx_core::Error::Config(_)));
    if usage {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
