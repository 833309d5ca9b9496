use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    /// Wall-clock milliseconds per stage. Not reproducible between runs.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl SampleEntry {
    pub fn ok(id: impl Into<String>, outputs: Vec<String>) -> Self {
        Self {
            id: id.into(),
            status: Status::Ok,
            stage: None,
            error: None,
            outputs,
            timings_ms: BTreeMap::new(),
            details: None,
        }
    }

    pub fn failed(id: impl Into<String>, stage: &str, error: impl ToString) -> Self {
        Self {
            id: id.into(),
            status: Status::Error,
            stage: Some(stage.to_string()),
            error: Some(error.to_string()),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            details: None,
        }
    }
}

/// Record of one CLI run: enough to repeat it and to see what failed where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub samples: Vec<SampleEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, samples: Vec<SampleEntry>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            samples,
        }
    }

    pub fn failures(&self) -> usize {
        self.samples.iter().filter(|s| s.status == Status::Error).count()
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
