//! Effective per-command configuration, snapshotted next to every output.
//!
//! Each command writes `run_config.toml` into its output directory with all
//! parameters it actually used (after flag overrides), so a directory of
//! results carries the full recipe that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ColorSpace;
use crate::training::TrainConfig;

pub const SNAPSHOT_NAME: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MakeDatasetConfig {
    pub hr_dir: PathBuf,
    pub scale: usize,
    pub patch: usize,
    pub stride: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConditionsConfig {
    pub manifest: PathBuf,
    /// `bicubic` or `external:<dir>`.
    pub condition: String,
    pub mapping: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub manifest: PathBuf,
    pub condition: String,
    pub mapping: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub checkpoint: PathBuf,
    pub lr_dir: PathBuf,
    pub condition: String,
    pub mapping: Option<PathBuf>,
    pub scale: usize,
    pub inference_steps: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub sr_dir: PathBuf,
    pub hr_dir: PathBuf,
    pub color: ColorSpace,
    pub border: usize,
    /// External perceptual metric command: program followed by its arguments.
    pub lpips: Option<Vec<String>>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Snapshot<'a, C> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
}

/// Writes `run_config.toml` into `dir`.
pub fn write_snapshot<C: Serialize>(dir: &Path, command: &str, config: &C) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = toml::to_string(&Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(SNAPSHOT_NAME);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
