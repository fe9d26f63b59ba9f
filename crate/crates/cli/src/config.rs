//! Optional TOML config file, overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "CONEPOSE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "conepose-out";

/// Values read from `--config`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthFile,
    #[serde(default)]
    pub train: TrainFile,
    #[serde(default)]
    pub eval: EvalFile,
    #[serde(default)]
    pub gradcheck: GradcheckFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub cones: Option<usize>,
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
    pub camera_height: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub data: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub decay_epochs: Option<Vec<usize>>,
    pub decay_factor: Option<f64>,
    pub gamma: Option<f64>,
    pub augment: Option<usize>,
    pub jitter: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub data: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub sigma: Option<f64>,
    pub perturb: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub inlier_threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckFile {
    pub trials: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Flag, then config file, then `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag, then [`OUT_DIR_ENV`], then config file, then [`DEFAULT_OUT_DIR`].
pub fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or(file)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Serialize)]
pub struct SynthRun {
    pub seed: u64,
    pub out: PathBuf,
    pub cones: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub camera_height: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainRun {
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub gamma: f64,
    pub augment: usize,
    pub jitter: bool,
}

#[derive(Debug, Serialize)]
pub struct EvalRun {
    pub mode: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub provider: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturb: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    pub inlier_threshold: f64,
}

#[derive(Debug, Serialize)]
pub struct GradcheckRun {
    pub seed: u64,
    pub trials: usize,
    pub model: bool,
}

/// Logs the resolved run configuration and returns it as TOML.
pub fn announce<T: Serialize>(name: &str, run: &T) -> String {
    let text = toml::to_string(run).expect("run config serializes");
    log::info!("{name} resolved config:\n{text}");
    text
}
