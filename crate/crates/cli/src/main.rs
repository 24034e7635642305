//! `fgst`: generate synthetic skeleton data, train, evaluate, classify and
//! export attention records.

mod commands;
mod experiment;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "fgst", version, about = "Train, evaluate and inspect skeleton action recognition models")]
struct Cli {
    /// Seed for data generation, initialisation and shuffling. Overrides
    /// the seed of an experiment file; data generation defaults to 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: sample containers plus a manifest.
    GenData {
        /// Dataset spec (TOML). Defaults to all classes, 100 samples each.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; must be absent or empty.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per requested stream.
    Train(TrainArgs),
    /// Top-1 accuracy of one or more checkpoints, fused when several.
    Eval {
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// `train`, `eval` or `all`.
        #[arg(long, default_value = "eval")]
        split: String,
        /// Write the per-class table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Class scores for one sample.
    Infer {
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        sample: PathBuf,
    },
    /// Export the attention record of one sample as JSON.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment file with `[model]` and `[train]` tables.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; must be absent or empty.
    #[arg(long)]
    out: PathBuf,
    /// Spatial variant: basic-s, a, b or c.
    #[arg(long)]
    variant: Option<String>,
    /// Temporal block: basic, tcn-only or fg.
    #[arg(long)]
    temporal: Option<String>,
    /// Stage split as `L1,L2`.
    #[arg(long)]
    stages: Option<String>,
    /// Comma-separated input streams, or `all`. Several streams train into
    /// one subdirectory each.
    #[arg(long)]
    streams: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {}", e.code(), msg.split_whitespace().collect::<Vec<_>>().join(" "));
            ExitCode::FAILURE
        }
    }
}
