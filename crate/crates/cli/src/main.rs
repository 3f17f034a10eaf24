//! `xmodal`: reproducible multimodal recurrent-network experiments.
//!
//! Exit codes: 0 success, 1 validation error (flags, config, spec), 2
//! runtime error. Logging is controlled by `XMODAL_LOG` (error/info/debug).

mod commands;
mod config;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::AllocateArgs;

#[derive(Parser)]
#[command(
    name = "xmodal",
    about = "Multimodal LSTM / X-LSTM / SH-LSTM laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset (JSONL).
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive a budget-matched architecture from unimodal scores.
    Allocate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Baseline spec JSON (defaults to the 21/42/84 LSTM).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Unimodal scores as `wt,sl,st` (e.g. 0.8062,0.8017,0.7418).
        #[arg(long)]
        scores: Option<String>,
        /// Score exponent.
        #[arg(long)]
        k: Option<f64>,
        /// A, B, N, ALL, WSL or CUT.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        cross_fraction: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model on a full dataset; writes a checkpoint artifact.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation of one or more architectures.
    Crossval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fold worker pool size (default: available parallelism).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Synthesize a confidence-maximizing input sequence from a checkpoint.
    Dream {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consolidate crossval artifacts into a comparison table.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("XMODAL_LOG")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful outputs; anything else is a usage
            // error and exits 1 per the documented contract
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let result = match &cli.command {
        Command::Generate { config, seed, out } => {
            commands::generate(config, *seed, out.as_ref())
        }
        Command::Allocate {
            config,
            baseline,
            scores,
            k,
            strategy,
            cross_fraction,
            tolerance,
            out,
        } => commands::allocate_cmd(&AllocateArgs {
            config: config.clone(),
            baseline: baseline.clone(),
            scores: scores.clone(),
            k: *k,
            strategy: strategy.clone(),
            cross_fraction: *cross_fraction,
            tolerance: *tolerance,
            out: out.clone(),
        }),
        Command::Train { config, seed, out } => {
            commands::train_cmd(config, *seed, out.as_ref())
        }
        Command::Crossval {
            config,
            seed,
            out,
            workers,
        } => commands::crossval_cmd(config, *seed, out.as_ref(), *workers),
        Command::Dream { config, seed, out } => commands::dream_cmd(config, *seed, out.as_ref()),
        Command::Report { config, out } => commands::report_cmd(config, out.as_ref()),
    };

    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.exit);
    }
}
