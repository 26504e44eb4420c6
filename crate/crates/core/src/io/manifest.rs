use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one CLI run, written as `manifest.json` into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
    /// Command-specific results (e.g. attack iterations, success flag).
    pub summary: serde_json::Value,
}

pub fn unix_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        let now = unix_millis();
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            started_unix_ms: now,
            finished_unix_ms: now,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            summary: serde_json::Value::Null,
        }
    }

    /// Stamps the finish time and writes `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix_ms = unix_millis();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        super::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(
            dir.join(MANIFEST_FILE),
        )?)?)
    }
}
