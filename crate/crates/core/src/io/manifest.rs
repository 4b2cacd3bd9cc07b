//! Run manifests: the config, measured constants and the snapshot index
//! of one training run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::model::MATRIX_NAMES;
use crate::train::RunConstants;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotEntry {
    pub step: u64,
    pub matrix: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<RunConstants>,
    #[serde(default)]
    pub snapshots: Vec<SnapshotEntry>,
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Identifier derived from the config alone, so reruns share it.
pub fn run_id(config: &RunConfig) -> String {
    format!("run-{:016x}", fnv1a(config.to_toml().as_bytes()))
}

fn entry_error(index: usize, path: &str, reason: impl Into<String>) -> Error {
    Error::Manifest {
        index,
        path: path.to_string(),
        reason: reason.into(),
    }
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            run_id: run_id(config),
            trace: None,
            config: Some(config.clone()),
            constants: None,
            snapshots: Vec::new(),
        }
    }

    /// Checks matrix names and that steps never decrease.
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() {
            return Err(entry_error(0, "", "empty run_id"));
        }
        if let Some(c) = &self.config {
            c.validate()?;
        }
        let mut last = 0u64;
        for (i, e) in self.snapshots.iter().enumerate() {
            if !MATRIX_NAMES.contains(&e.matrix.as_str()) {
                return Err(entry_error(i, &e.path, format!("unknown matrix {:?}", e.matrix)));
            }
            if e.path.is_empty() {
                return Err(entry_error(i, &e.path, "empty path"));
            }
            if e.step < last {
                return Err(entry_error(i, &e.path, format!("step {} after step {last}", e.step)));
            }
            last = e.step;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable")
    }

    pub fn resolve(&self, base_dir: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_owned()
        } else {
            base_dir.join(p)
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<RunManifest> {
    let m: RunManifest = toml::from_str(text).map_err(|e| entry_error(0, "", e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// Loads a manifest and checks every referenced file exists. Returns the
/// manifest with the directory its relative paths resolve against.
pub fn load_manifest(path: &Path) -> Result<(RunManifest, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest(&text)?;
    let base = path.parent().map(Path::to_owned).unwrap_or_default();
    for (i, e) in m.snapshots.iter().enumerate() {
        if !m.resolve(&base, &e.path).is_file() {
            return Err(entry_error(i, &e.path, "file not found"));
        }
    }
    if let Some(t) = &m.trace {
        if !m.resolve(&base, t).is_file() {
            return Err(entry_error(m.snapshots.len(), t, "trace file not found"));
        }
    }
    Ok((m, base))
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    std::fs::write(path, m.to_toml()).map_err(|e| Error::io(path, e))
}
