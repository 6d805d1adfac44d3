use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::Result;

/// What produced a run directory: the effective configuration, its hash,
/// the seed and a digest of every artifact written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub verb: String,
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    /// File name → sha256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(verb: &str, cfg: &RunConfig) -> Self {
        Manifest {
            verb: verb.to_string(),
            experiment: cfg.experiment.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.to_toml(),
            wall_time_seconds: None,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        let digest = format!("{:x}", Sha256::digest(fs::read(path)?));
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.artifacts.insert(name, digest);
        Ok(())
    }

    /// Writes `manifest-<verb>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("manifest-{}.json", self.verb));
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}
