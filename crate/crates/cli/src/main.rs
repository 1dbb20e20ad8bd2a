mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Multi-channel speech separation with fixed beamformer pools.
#[derive(Debug, Parser)]
#[command(name = "ufe", version, about)]
pub struct Cli {
    /// Worker threads (default: every logical core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a multi-channel mixture dataset and its manifest.
    Simulate(SimulateArgs),
    /// Design the fixed beamformer bank and write it to disk.
    DesignBeams(DesignArgs),
    /// Estimate source directions in a multi-channel recording.
    Localize(LocalizeArgs),
    /// Train a model with the staged schedule.
    Train(TrainArgs),
    /// Score a model on whole utterances.
    EvalOffline(EvalArgs),
    /// Score a model with block-online processing.
    EvalOnline(EvalOnlineArgs),
    /// Finite-difference check of every autodiff op and the assembled E2E graph.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory (WAVs under `wav/`, `manifest.jsonl`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Speaker source list; without it a synthetic speaker corpus is used.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Overlap condition: train, OV35 or OV75.
    #[arg(long)]
    pub condition: Option<String>,
    /// Speaker split to draw from: train, valid or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Also write per-speaker reverberant images.
    #[arg(long)]
    pub write_images: bool,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory for `bank.ufeb` and `config.toml`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub num_beams: Option<usize>,
    /// superdirective or delay_and_sum.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub loading: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Multi-channel WAV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Checkpoint whose unmixing masks weight two sources; without it one source is
    /// localized with a unit mask.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub num_angles: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "train")]
    pub train_manifest: Option<PathBuf>,
    #[arg(long = "valid")]
    pub valid_manifest: Option<PathBuf>,
    /// Run directory for checkpoints, logs and the resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// ufe or e2e.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds both parameter initialisation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from `last.ufec` in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory for `scores.jsonl`, `summary.json` and `config.toml`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalOnlineArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// History seconds before each block.
    #[arg(long)]
    pub history: Option<f64>,
    #[arg(long)]
    pub block: Option<f64>,
    #[arg(long)]
    pub hop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random parameter coordinates of the assembled E2E graph.
    #[arg(long)]
    pub coords: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", commands::category(&e));
            ExitCode::from(1)
        }
    }
}
