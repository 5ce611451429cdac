//! The `run_manifest.json` written beside every stage's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    /// Command line that produced the run; replaying it re-executes the stage.
    pub argv: Vec<String>,
    pub seed: u64,
    /// Fully resolved stage configuration.
    pub config: Value,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    #[serde(default)]
    pub result: Value,
}

/// Collects manifest fields while a stage runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(stage: &str, seed: u64) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                stage: stage.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                argv: std::env::args().collect(),
                seed,
                config: Value::Null,
                model: None,
                task: None,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                started_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                wall_clock_seconds: 0.0,
                result: Value::Null,
            },
            started: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<(), CliError> {
        self.manifest.config = serde_json::to_value(config).map_err(CliError::runtime)?;
        Ok(())
    }

    pub fn model(&mut self, name: &str) {
        self.manifest.model = Some(name.to_string());
    }

    pub fn task(&mut self, name: &str) {
        self.manifest.task = Some(name.to_string());
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.manifest.inputs.insert(key.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.manifest.outputs.insert(key.to_string(), path.display().to_string());
    }

    pub fn result<T: Serialize>(&mut self, result: &T) -> Result<(), CliError> {
        self.manifest.result = serde_json::to_value(result).map_err(CliError::runtime)?;
        Ok(())
    }

    /// Stamps the elapsed time and writes the manifest into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest, CliError> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(CliError::runtime)?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}

pub fn load(path: &Path) -> Result<RunManifest, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
