use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use rationale_core::checkpoint::sha256_hex;
use serde::Serialize;
use serde_json::Value;

/// Record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    /// SHA-256 of every input and output file.
    pub artifact_hashes: BTreeMap<String, String>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>, started_at: String) -> Self {
        Self {
            command: command.into(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            started_at,
            finished_at: String::new(),
            artifact_hashes: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.inputs.insert(name.into(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) -> &mut Self {
        self.outputs.insert(name.into(), path.to_path_buf());
        self
    }

    /// Hashes the recorded files and writes the manifest atomically.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        for p in self.inputs.values().chain(self.outputs.values()) {
            if p.is_file() {
                let bytes = fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
                self.artifact_hashes.insert(p.display().to_string(), sha256_hex(&bytes));
            }
        }
        self.finished_at = now();
        write_atomic(path, (serde_json::to_string_pretty(&self)? + "\n").as_bytes())
    }
}

/// Writes through a sibling temp file and renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}
