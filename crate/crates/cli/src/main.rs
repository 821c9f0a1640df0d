use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use coupling_core::experiment::{run_experiment, ExperimentConfig, ExperimentKind, Status};

/// Coupling-method experiments for coupled forward-backward SDEs.
#[derive(Parser, Debug)]
#[command(name = "coupling", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample W, W' and coupled paths; report variance tables.
    Paths(Common),
    /// Solve the FBSDE (long horizon when `partition > 1`).
    Solve(Common),
    /// Coupling variance and bound study.
    Cv(Common),
    /// Conditional-expectation sandwich check.
    Sandwich(Common),
    /// Ratio test for Malliavin differentiability.
    Malliavin(Common),
    /// Time regularity of the solution.
    Regularity(Common),
    /// Fractional potential condition checker.
    Fracpot(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; defaults for the subcommand if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory for CSV, JSON and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded run with no wall time in the manifest.
    #[arg(long)]
    deterministic: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Paths(c) => (ExperimentKind::Paths, c),
            Command::Solve(c) => (ExperimentKind::Solve, c),
            Command::Cv(c) => (ExperimentKind::Cv, c),
            Command::Sandwich(c) => (ExperimentKind::Sandwich, c),
            Command::Malliavin(c) => (ExperimentKind::Malliavin, c),
            Command::Regularity(c) => (ExperimentKind::Regularity, c),
            Command::Fracpot(c) => (ExperimentKind::Fracpot, c),
        }
    }
}

fn build_config(kind: ExperimentKind, args: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
            if cfg.kind != kind {
                bail!("config is for '{}', not '{}'", cfg.kind.name(), kind.name());
            }
            cfg
        }
        None => ExperimentConfig::new(kind),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.paths = paths;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let (kind, args) = cli.command.split();
    let cfg = build_config(kind, &args)?;
    let outcome = run_experiment(&cfg, args.deterministic)?;
    println!("{}", serde_json::to_string_pretty(&outcome.manifest)?);
    Ok(outcome.status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Violation) => {
            log::warn!("verdict: violation");
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
