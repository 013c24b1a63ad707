//! `sat`: scene generation, training, evaluation, cost benchmarking and
//! re-attention inspection.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sat_core::Error;

#[derive(Parser)]
#[command(name = "sat", version, about = "Size-aware point cloud segmentation transformer")]
struct Cli {
    /// Flat `key = value` file; keys match the long flag names with `_`
    /// for `-`. Flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed. Falls back to the config file, then SAT_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rooms into <out>/train and <out>/val.
    #[command(after_help = "Config keys: out, scenes, val_fraction, points, seed")]
    Gen(GenArgs),
    /// Train a model on a generated data directory.
    #[command(after_help = "Config keys: data, out, preset, variant, epochs, max_steps, lr, milestones, \
        lr_decay, optimizer, momentum, weight_decay, batch_size, max_points, clip, precision, \
        zero_gate_init, seed")]
    Train(Box<TrainArgs>),
    /// Per-class IoU, mIoU, mAcc and class-IoU variance of a checkpoint.
    #[command(after_help = "Config keys: checkpoint, data, split, out")]
    Eval(EvalArgs),
    /// Count first-stage attention MACs and time the attention forward pass.
    #[command(after_help = "Config keys: preset, variant, points, out, seed")]
    Bench(BenchArgs),
    /// Export per-class mean re-attention gates for every block.
    #[command(after_help = "Config keys: checkpoint, data, split, out")]
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total number of scenes [default: 10]
    #[arg(long)]
    scenes: Option<usize>,
    /// Share of scenes held out for validation [default: 0.2]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Points per scene [default: 2048]
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// desk, s3dis or scannet [default: desk]
    #[arg(long)]
    preset: Option<String>,
    /// full, no-reattention, no-reattention-sum, no-reattention-point-only or lite-mga [default: full]
    #[arg(long)]
    variant: Option<String>,
    /// [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// [default: 0.006]
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated epochs [default: 60% and 80% of epochs]
    #[arg(long)]
    milestones: Option<String>,
    /// [default: 0.1]
    #[arg(long)]
    lr_decay: Option<f64>,
    /// sgd or adam [default: sgd]
    #[arg(long)]
    optimizer: Option<String>,
    /// [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// [default: 0.0001]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Scenes per step [default: 1]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Scenes above this are subsampled [default: 2048]
    #[arg(long)]
    max_points: Option<usize>,
    /// Global gradient norm clip, or `none` [default: 1.0]
    #[arg(long)]
    clip: Option<String>,
    /// f32 or f64 [default: f32]
    #[arg(long)]
    precision: Option<String>,
    /// Start every re-attention gate at exactly 0.5.
    #[arg(long)]
    zero_gate_init: Option<bool>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// train or val [default: val]
    #[arg(long)]
    split: Option<String>,
    /// CSV output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// [default: s3dis]
    #[arg(long)]
    preset: Option<String>,
    /// [default: full]
    #[arg(long)]
    variant: Option<String>,
    /// Comma-separated scene sizes [default: 1000,2000,4000]
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// train or val [default: train]
    #[arg(long)]
    split: Option<String>,
    /// Directory for the per-layer CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a, config, cli.seed),
        Command::Train(a) => commands::train(*a, config, cli.seed),
        Command::Eval(a) => commands::eval(a, config),
        Command::Bench(a) => commands::bench(a, config, cli.seed),
        Command::Inspect(a) => commands::inspect(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
