mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::UsageError;

/// Exit codes beyond clap's own (0 success, 2 usage).
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "vinenav", version, about = "Depth-based vineyard row navigation: worlds, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration layered over the defaults.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `sac.lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Global seed for training and evaluation streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `<VINENAV_OUT or runs>/<subcommand>`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Workers {
    /// Evaluation worker threads; 0 uses available parallelism.
    #[arg(long, env = "VINENAV_WORKERS", default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a vineyard world file.
    GenWorld {
        /// Start from a built-in layout.
        #[arg(long, value_parser = ["train", "test"], conflicts_with = "config")]
        preset: Option<String>,
        /// TOML run configuration; its `world` table is used.
        #[arg(short, long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// World seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Train the actor and critics with SAC.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Score a checkpoint on every corridor in both directions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        runs_per_row: Option<usize>,
    },
    /// Repeat evaluation runs at increasing depth-noise factors.
    SweepNoise {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
        /// Runs per selected row.
        #[arg(long)]
        runs: Option<usize>,
        /// Row shapes to include.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<String>>,
    },
    /// Run the same policy under other platform footprints.
    SwapPlatform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        workers: Workers,
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        platforms: Option<Vec<String>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<String>>,
    },
    /// Time single-thread actor inference.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Actor to time; a seeded random initialization when absent.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands::*;
    match cli.command {
        Command::GenWorld {
            preset,
            config,
            set,
            seed,
            output,
        } => gen_world(preset.as_deref(), config.as_deref(), &set, seed, &output),
        Command::Train {
            common,
            world,
            episodes,
            checkpoint_every,
        } => train(&common, world, episodes, checkpoint_every),
        Command::Eval {
            common,
            workers,
            world,
            checkpoint,
            runs_per_row,
        } => eval(&common, workers.workers, world, checkpoint, runs_per_row),
        Command::SweepNoise {
            common,
            workers,
            world,
            checkpoint,
            factors,
            runs,
            rows,
        } => sweep_noise(&common, workers.workers, world, checkpoint, factors, runs, rows),
        Command::SwapPlatform {
            common,
            workers,
            world,
            checkpoint,
            platforms,
            runs,
            rows,
        } => swap_platform(&common, workers.workers, world, checkpoint, platforms, runs, rows),
        Command::Bench {
            common,
            checkpoint,
            trials,
            warmup,
        } => bench(&common, checkpoint, trials, warmup),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<vinenav::Error>() {
        Some(vinenav::Error::Diverged { .. }) => EXIT_DIVERGED,
        Some(vinenav::Error::ArchMismatch { .. } | vinenav::Error::Checkpoint(_)) => EXIT_CHECKPOINT,
        Some(vinenav::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
