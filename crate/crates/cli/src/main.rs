//! `classrepsim` command-line driver.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Axis, Ctx};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "classrepsim", version, about = "Class-similarity analysis, STAC ResNet training and cost reports")]
struct Cli {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for initialization, shuffling and augmentation (overrides `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seeds for repeated runs.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write metrics, a checkpoint and the resolved config.
    Train,
    /// Multi-scale class-similarity curves and per-stage peak scales.
    Analyze {
        /// Checkpoint of the configured model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Analyze a feature dump instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        dump: Option<PathBuf>,
        /// Also save the captured features as a dump.
        #[arg(long, conflicts_with = "dump")]
        write_dump: Option<PathBuf>,
    },
    /// FLOPs and parameter report.
    Cost {
        /// Comparison table over the given configs, or the built-in ResNet20 grid.
        #[arg(long)]
        table: bool,
        /// Config files for `--table`.
        configs: Vec<PathBuf>,
    },
    /// Train and evaluate every cell of an ablation grid.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// ResNet20 on CIFAR-10 with full-length training.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Class similarity of two Gaussian classes sliding together.
    Toy {
        #[arg(long, default_value_t = 5)]
        t_steps: usize,
        #[arg(long, default_value_t = 500)]
        n_per_class: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let seeds = if cli.seeds.is_empty() { vec![cfg.train.seed] } else { cli.seeds };
    let ctx = Ctx {
        cfg,
        seeds,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Train => commands::train::run(&ctx),
        Command::Analyze {
            checkpoint,
            dump,
            write_dump,
        } => commands::analyze::run(&ctx, checkpoint.as_deref(), dump.as_deref(), write_dump.as_deref()),
        Command::Cost { table, configs } => commands::cost::run(&ctx, table, &configs),
        Command::Sweep { axis, paper_scale } => commands::sweep::run(ctx, axis, paper_scale),
        Command::Toy { t_steps, n_per_class } => commands::toy::run(&ctx, t_steps, n_per_class),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::EXIT_OK),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::exit_code(&err))
        }
    }
}
