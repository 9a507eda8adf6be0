//! Command-line front end: synthetic data, patch manifests, training,
//! evaluation, gradient checks and parameter counts.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmbf::Error;

#[derive(Parser, Debug)]
#[command(name = "lmbf", version, about = "Retinal segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a deterministic synthetic dataset.
    Synth(SynthArgs),
    /// Resize, tile and select patches; write a manifest.
    Patchify(PatchifyArgs),
    /// Train a network and write its checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print the parameter table of one configuration.
    Params(ParamsArgs),
    /// Print the parameter ladder of every ablation row.
    Ablate,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Training images.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Test images.
    #[arg(long, default_value_t = 2)]
    test_count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value = "vessels")]
    feature: String,
}

#[derive(Args, Debug)]
struct PatchifyArgs {
    /// Dataset root holding `<split>/images` and `<split>/masks`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Run config with `dataset`, `feature`, `min_fg` and network keys.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Ablation id or a run config file.
    #[arg(long, default_value = "FULL")]
    config: String,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Run config for dataset and feature tags.
    #[arg(long)]
    config: Option<String>,
    /// Average per-image AUC instead of pooling all pixels.
    #[arg(long)]
    per_image_auc: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// Ablation id or a network config file.
    #[arg(long, default_value = "FULL")]
    config: String,
}

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Patchify(a) => commands::patchify(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Params(a) => commands::params(&a),
        Command::Ablate => commands::ablate(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(EXIT_DIVERGED),
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}
