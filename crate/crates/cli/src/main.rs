//! Command-line harness for the relfair library: run experiments, compare
//! algorithm variants on a shared partition, drive the exact oracle, and
//! compute fairness metrics for a loss vector.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relfair_cli::commands;

#[derive(Parser)]
#[command(name = "relfair", version, about = "Relative-fairness DRO experiment harness")]
struct Cli {
    /// Worker threads for intra-run parallelism (0 = automatic). Results
    /// are identical for any worker count.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one algorithm end to end and write its artifacts.
    Run(ConfigArg),
    /// Run several configs on the same partition and emit a comparison table.
    Compare {
        /// Experiment configurations; repeat the flag per config.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Seed batch (comma separated). Defaults to the first config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force sweep of the mixing coefficient on the config's grid.
    Exact(ConfigArg),
    /// Fairness report of a per-client loss vector (CSV with a `loss` column).
    Metrics {
        #[arg(long)]
        losses: PathBuf,
        #[arg(long)]
        alpha_a: f64,
        #[arg(long)]
        alpha_b: f64,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a configuration without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Run(args) => commands::cmd_run(&args.config, args.seed, args.out).map(|_| ()),
        Command::Compare { configs, seeds, out } => {
            commands::cmd_compare(&configs, seeds, out).map(|_| ())
        }
        Command::Exact(args) => commands::cmd_exact(&args.config, args.seed, args.out).map(|_| ()),
        Command::Metrics {
            losses,
            alpha_a,
            alpha_b,
            phi,
            out,
        } => commands::cmd_metrics(&losses, alpha_a, alpha_b, phi, out).map(|_| ()),
        Command::ValidateConfig { config } => commands::cmd_validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
