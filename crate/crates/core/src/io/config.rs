//! Run configuration, stored as sectioned `key = value` TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataSpec, ModelConfig};
use crate::optim::{OptimizerSpec, ScheduleSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    pub train: TrainSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub noise: f64,
    pub mean_norm: f64,
    /// Defaults to the model seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Draw a fresh batch every step instead of reusing one.
    pub resample: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let spec = DataSpec::default();
        Self {
            noise: spec.noise,
            mean_norm: spec.mean_norm,
            seed: None,
            resample: false,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> DataSpec {
        DataSpec {
            noise: self.noise,
            mean_norm: self.mean_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: u64,
    /// Snapshot every step up to and including this one.
    #[serde(default = "default_dense")]
    pub snapshot_dense_until: u64,
    /// Snapshot cadence after the dense prefix.
    #[serde(default = "default_every")]
    pub snapshot_every: u64,
    #[serde(default = "default_window")]
    pub onset_window: usize,
    /// Fixed SoSD threshold overriding the stability bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

fn default_dense() -> u64 {
    1000
}

fn default_every() -> u64 {
    10
}

fn default_window() -> usize {
    crate::telemetry::DEFAULT_ONSET_WINDOW
}

impl TrainSettings {
    pub fn new(steps: u64) -> Self {
        Self {
            steps,
            snapshot_dense_until: default_dense(),
            snapshot_every: default_every(),
            onset_window: default_window(),
            epsilon: None,
        }
    }

    /// Whether `step` gets a snapshot. The final step always does.
    pub fn snapshot_due(&self, step: u64) -> bool {
        step <= self.snapshot_dense_until || step % self.snapshot_every == 0 || step == self.steps
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.model.validate().map_err(wrap)?;
        if self.train.steps == 0 {
            return Err(Error::Config("train.steps must be at least 1".into()));
        }
        if self.train.snapshot_every == 0 {
            return Err(Error::Config("train.snapshot_every must be at least 1".into()));
        }
        if self.train.onset_window == 0 {
            return Err(Error::Config("train.onset_window must be at least 1".into()));
        }
        if let Some(e) = self.train.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config("train.epsilon must be positive".into()));
            }
        }
        if !(self.data.noise >= 0.0 && self.data.mean_norm > 0.0) {
            return Err(Error::Config("data.noise must be >= 0 and data.mean_norm > 0".into()));
        }
        self.schedule.validate(self.train.steps).map_err(wrap)?;
        self.optimizer.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.model.seed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

/// Parses and validates a config. A run manifest is accepted too; its
/// `[config]` table is used.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let config: RunConfig = match table.get("config") {
        Some(inner) if table.contains_key("run_id") => inner
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
        _ => toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
