use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aggnn_core::SeedStreams;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{IoContext, Result};

/// Provenance of one command run. Written before any result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: SeedStreams,
    pub master_seed: u64,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, artifacts: &[&str]) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: cfg.hash()?,
            seeds: cfg.seeds.streams(),
            master_seed: cfg.seeds.master,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            artifacts: artifacts.iter().map(PathBuf::from).collect(),
        })
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    /// Create the run directory, store the resolved config next to the
    /// manifest and write the manifest.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).at(dir)?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, cfg.to_toml()?).at(&cfg_path)?;
        let path = dir.join(Self::file_name(&self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").at(&path)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| crate::error::CliError::artifact(path, e))
    }
}
