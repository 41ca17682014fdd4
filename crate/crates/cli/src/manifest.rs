//! Run manifests: a small TOML record written next to every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lpcn::binio;
use lpcn::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub artifacts: Vec<String>,
    /// Every option after defaults were applied.
    pub config: BTreeMap<String, String>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, started: f64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            started,
            finished: started,
            artifacts: Vec::new(),
            config: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn artifact(&mut self, path: &Path) -> &mut Self {
        self.artifacts.push(path.display().to_string());
        self
    }

    /// `<artifact>.manifest.toml`
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".manifest.toml");
        PathBuf::from(s)
    }

    /// Stamps the finish time and writes the manifest next to `artifact`.
    pub fn write_beside(&mut self, artifact: &Path) -> Result<PathBuf> {
        self.finished = now();
        let text = toml::to_string(self).map_err(|e| Error::Argument(format!("manifest: {e}")))?;
        let path = Self::path_for(artifact);
        binio::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
