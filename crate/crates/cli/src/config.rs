use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use impress_core::bundle::sha256_hex;
use impress_core::world::{QualityThresholds, WorldConfig};
use serde::{Deserialize, Serialize};

/// Everything a subcommand ran with. Reports embed it together with its
/// hash; paths are stored as file names only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub world: Option<WorldConfig>,
    /// Optimizer and model settings per training or evaluation stage.
    pub stages: BTreeMap<String, serde_json::Value>,
    pub lambdas: Vec<f64>,
    pub thresholds: Option<QualityThresholds>,
    pub seeds: BTreeMap<String, u64>,
    pub paths: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    pub fn world(&mut self, world: &WorldConfig) {
        self.world = Some(world.clone());
        self.thresholds = Some(world.thresholds);
    }

    pub fn path(&mut self, key: &str, p: &Path) {
        self.paths.insert(key.to_string(), file_name(p));
    }

    pub fn stage(&mut self, key: &str, value: impl Serialize) {
        self.stages.insert(
            key.to_string(),
            serde_json::to_value(value).expect("stage settings serialize"),
        );
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("run config serializes"))
    }
}

pub fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `prefix` with `suffix` appended to its last component.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
