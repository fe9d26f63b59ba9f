//! `conepose`: synthetic data, training, evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "conepose",
    version,
    about = "Monocular traffic-cone localization experiments"
)]
pub struct Cli {
    /// TOML file with default values; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene, rendered patches and a manifest.
    Synth(SynthArgs),
    /// Train the keypoint regressor on a generated dataset.
    Train(TrainArgs),
    /// Run the accuracy or bounding-box perturbation study.
    Eval {
        #[command(subcommand)]
        mode: EvalMode,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub cones: Option<usize>,
    #[arg(long)]
    pub depth_min: Option<f64>,
    #[arg(long)]
    pub depth_max: Option<f64>,
    /// Camera height above the ground, meters.
    #[arg(long)]
    pub camera_height: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs at which the learning rate is multiplied by the decay factor.
    #[arg(long, value_delimiter = ',')]
    pub decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    /// Cross-ratio regularizer weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Augmented copies added per patch before training.
    #[arg(long)]
    pub augment: Option<usize>,
    /// Disable per-epoch photometric jitter.
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Provider {
    Oracle,
    Model,
}

#[derive(Debug, Args)]
pub struct EvalCommon {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Regressor checkpoint written by `train`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// RANSAC inlier threshold, pixels.
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalMode {
    /// Position error versus depth, with a quadratic fit.
    Accuracy {
        #[arg(long, value_enum, default_value_t = Provider::Oracle)]
        provider: Provider,
        /// Oracle keypoint noise, patch pixels.
        #[arg(long)]
        sigma: Option<f64>,
        #[command(flatten)]
        common: EvalCommon,
    },
    /// Depth variance under random bounding-box perturbations.
    Perturb {
        #[arg(long, value_enum, default_value_t = Provider::Model)]
        provider: Provider,
        /// Comma-separated perturbation magnitudes (fractions of box size).
        #[arg(long, value_delimiter = ',')]
        perturb: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: EvalCommon,
    },
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random loss configurations to check.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip the network parameter check.
    #[arg(long)]
    pub no_model: bool,
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
