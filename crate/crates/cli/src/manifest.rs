use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written last into its output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub platform: String,
    pub config_paths: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<PathBuf>,
    /// Excluded from reproducibility comparisons.
    pub created_unix_seconds: u64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            platform: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
            config_paths: Vec::new(),
            inputs: Vec::new(),
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            created_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf, Failure> {
        let path = dir.join(MANIFEST_FILE);
        self.artifact(path.clone());
        let text = serde_json::to_string_pretty(self).map_err(Failure::runtime)?;
        std::fs::write(&path, text + "\n").map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
