//! Evaluation run configuration, parsed from YAML.
//!
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults; syntax errors carry the offending key and
//! line from the parser.

use super::report::Variant;
use crate::skeleton::{canonical_14, canonical_16, JointSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_TIMEOUT_S: f64 = 30.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

/// Unit system of the 3D outputs a prediction source produces. Only
/// camera-space millimetres exist today; the key is kept explicit so runs
/// are self-describing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output3d {
    #[default]
    CameraMm,
}

/// Which split supplies normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    /// Train split of `train_archive`.
    TrainDataset,
    /// Test split of the dataset being evaluated.
    #[default]
    TestDataset,
}

/// Where predictions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionSource {
    /// Pre-computed predictions in archive form. With several datasets the
    /// path must be a directory holding one `<dataset>.zip` per entry.
    File(FileSource),
    /// Ground truth plus Gaussian noise, generated in-process.
    OracleNoise(OracleNoiseSource),
    /// Child process speaking the line-delimited JSON wire protocol.
    External(ExternalSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleNoiseSource {
    pub sigma_mm: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSource {
    /// argv of the model process, program first.
    pub command: Vec<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
}

fn default_timeout_s() -> f64 {
    DEFAULT_TIMEOUT_S
}

fn default_num_workers() -> usize {
    1
}

fn default_num_joints() -> usize {
    16
}

fn default_num_frames() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_threshold_mm() -> f64 {
    crate::datasets::DEFAULT_SAMPLE_FRAMES_MM
}

fn default_min_bin() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Display name of the model under evaluation.
    pub model_type: String,
    #[serde(default)]
    pub variant: Variant,
    /// Parallel sessions / threads for the prediction stage. Results are
    /// bit-identical regardless of the value.
    #[serde(default = "default_num_workers")]
    pub num_workers: usize,
    /// Model consumes z-scored 2D and emits z-scored 3D; the harness
    /// normalizes inputs and un-normalizes outputs around the call.
    #[serde(default)]
    pub trained_on_normalized_data: bool,
    #[serde(default)]
    pub output_3d: Output3d,
    /// Model consumes a temporal window of 2D frames per sample.
    #[serde(default)]
    pub video_mode: bool,
    /// 16 for the full joint set, 14 for the reduced one.
    #[serde(default = "default_num_joints")]
    pub num_joints: usize,
    /// Window length in video mode; must be 1 otherwise.
    #[serde(default = "default_num_frames")]
    pub num_frames: usize,
    /// Allow scaling in the aligned protocol (similarity vs rigid fit).
    #[serde(default = "default_true")]
    pub with_scale: bool,
    #[serde(default)]
    pub stats_source: StatsSource,
    /// Minimum inter-frame displacement used when archives were thinned;
    /// recorded with results for provenance.
    #[serde(default = "default_threshold_mm")]
    pub sample_frames_threshold_mm: f64,
    /// Minimum train-occupancy of a viewpoint bin to enter the correlation.
    #[serde(default = "default_min_bin")]
    pub min_train: u64,
    /// Minimum test-occupancy of a viewpoint bin to enter the correlation.
    #[serde(default = "default_min_bin")]
    pub min_test: u64,
    /// Archive whose train split drives viewpoint analytics (and
    /// normalization stats under `stats_source: train_dataset`).
    #[serde(default)]
    pub train_archive: Option<PathBuf>,
    /// Evaluation archives by dataset name.
    pub datasets: BTreeMap<String, PathBuf>,
    pub prediction_source: PredictionSource,
}

impl EvalConfig {
    pub fn joint_set(&self) -> &'static JointSet {
        if self.num_joints == 14 {
            canonical_14()
        } else {
            canonical_16()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_type.trim().is_empty() {
            return Err(invalid("model_type", "must be non-empty"));
        }
        if self.num_workers < 1 {
            return Err(invalid("num_workers", "must be at least 1"));
        }
        if self.num_joints != 14 && self.num_joints != 16 {
            return Err(invalid(
                "num_joints",
                format!("must be 14 or 16, got {}", self.num_joints),
            ));
        }
        if self.num_frames < 1 {
            return Err(invalid("num_frames", "must be at least 1"));
        }
        if !self.video_mode && self.num_frames != 1 {
            return Err(invalid(
                "num_frames",
                format!("{} frames requires video_mode: true", self.num_frames),
            ));
        }
        if !(self.sample_frames_threshold_mm.is_finite() && self.sample_frames_threshold_mm >= 0.0)
        {
            return Err(invalid(
                "sample_frames_threshold_mm",
                "must be a finite value >= 0",
            ));
        }
        if self.datasets.is_empty() {
            return Err(invalid("datasets", "at least one dataset is required"));
        }
        if self.stats_source == StatsSource::TrainDataset && self.train_archive.is_none() {
            return Err(invalid(
                "stats_source",
                "train_dataset requires `train_archive`",
            ));
        }
        match &self.prediction_source {
            PredictionSource::File(_) => {}
            PredictionSource::OracleNoise(o) => {
                if !(o.sigma_mm >= 0.0 && o.sigma_mm.is_finite()) {
                    return Err(invalid("sigma_mm", "must be a finite value >= 0"));
                }
            }
            PredictionSource::External(e) => {
                if e.command.is_empty() {
                    return Err(invalid("command", "must name a program to run"));
                }
                if !(e.timeout_s.is_finite() && e.timeout_s > 0.0) {
                    return Err(invalid("timeout_s", "must be > 0"));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_config_str(text: &str, origin: &Path) -> Result<EvalConfig, ConfigError> {
    let cfg: EvalConfig = serde_yaml::from_str(text).map_err(|e| ConfigError::Syntax {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<EvalConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_config_str(&text, path)
}
