//! Reproducible qudit-dephasing experiment runner.

mod config;
mod manifest;
mod pipeline;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use pipeline::{CliError, Runner};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "quditqec", about = "Qudit dephasing, code synthesis and pulse compilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides bath.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count; 0 keeps the rayon default. Results are identical for
    /// any value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides cce.order (1 or 2).
    #[arg(long, global = true)]
    order: Option<u8>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and persist the seeded bath geometries.
    GenBath,
    /// Run the CCE ensemble and emit fidelity curves.
    Decay,
    /// Synthesize code plans per (S, t_opt).
    Optimize,
    /// Evaluate recovered fidelities, gain, and theta sweeps.
    Evaluate,
    /// Lower plans to pulse sequences with duration reports.
    Compile,
    /// Full pipeline.
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            ExperimentConfig::from_toml(&text).map_err(CliError::Validation)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.bath.master_seed = seed;
    }
    if let Some(order) = cli.order {
        cfg.cce.order = order;
    }
    if let Some(workers) = cli.workers {
        cfg.output.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if cfg.output.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.output.workers)
            .build_global()
            .map_err(|e| CliError::Validation(format!("worker pool: {e}")))?;
    }
    let out = PathBuf::from(&cfg.output.dir);
    let mut runner = Runner::new(cfg, out)?;
    match cli.command {
        Command::GenBath => runner.gen_bath(),
        Command::Decay => runner.decay(),
        Command::Optimize => runner.optimize(),
        Command::Evaluate => runner.evaluate(),
        Command::Compile => runner.compile(),
        Command::All => runner.run_all(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
