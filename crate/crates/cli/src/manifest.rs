//! `manifest.json` under the output root: one entry per distinct invocation,
//! with the resolved configuration, its hash, seeds and artifact digests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(config: &serde_json::Value) -> String {
    hex_digest(serde_json::to_string(config).expect("json value").as_bytes())
}

/// Collects artifacts for one command and merges them into the manifest.
pub struct Recorder {
    root: PathBuf,
    command: String,
    config: serde_json::Value,
    seeds: Vec<u64>,
    artifacts: Vec<Artifact>,
}

impl Recorder {
    pub fn new(root: &Path, command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            config,
            seeds,
            artifacts: vec![],
        }
    }

    pub fn add(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)?;
        let shown = path.strip_prefix(&self.root).unwrap_or(path);
        self.artifacts.push(Artifact {
            path: shown.display().to_string(),
            sha256: hex_digest(&bytes),
        });
        Ok(())
    }

    /// Replace any entry with the same command and config hash, else append.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let path = self.root.join("manifest.json");
        let mut m: Manifest = match std::fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s)
                .map_err(|e| CliError::runtime(format!("corrupt manifest {}: {e}", path.display())))?,
            Err(_) => Manifest::default(),
        };
        let entry = Entry {
            command: self.command,
            config_hash: config_hash(&self.config),
            config: self.config,
            seeds: self.seeds,
            artifacts: self.artifacts,
        };
        match m
            .entries
            .iter_mut()
            .find(|e| e.command == entry.command && e.config_hash == entry.config_hash)
        {
            Some(e) => *e = entry,
            None => m.entries.push(entry),
        }
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        ltsm::io::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
