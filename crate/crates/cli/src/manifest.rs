//! Run manifests: every file the tool writes is accompanied by a JSON
//! sidecar recording the command, the fully resolved parameters, the seed,
//! the tool version, and a digest of each output body. Re-running the same
//! manifest reproduces the result bodies byte for byte; only the timestamp
//! differs.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub created_utc: String,
    pub parameters: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<u64>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn new(command: &str, parameters: serde_json::Value) -> Self {
        RunManifest {
            tool: "swipt-harq",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            parameters,
            seed: None,
            episodes: None,
            outputs: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_episodes(mut self, episodes: u64) -> Self {
        self.episodes = Some(episodes);
        self
    }

    pub fn record_output(&mut self, path: &Path, body: &str) {
        let mut hasher = Sha256::new();
        hasher.update(body.as_bytes());
        self.outputs.push(OutputRecord {
            path: path.display().to_string(),
            bytes: body.len(),
            sha256: format!("{:x}", hasher.finalize()),
        });
    }

    /// Sidecar path: `<output>.manifest.json`.
    pub fn sidecar_path(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_sidecar(&self, output: &Path) -> anyhow::Result<PathBuf> {
        let path = Self::sidecar_path(output);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
