use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::HarnessError;

pub const BUILD_ID: &str = concat!("afrl-core ", env!("CARGO_PKG_VERSION"));

/// Provenance written next to every CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub profile: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub build_id: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

/// SHA-256 of the resolved configuration, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a command needs to stamp its outputs.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    command: String,
    profile: String,
    master_seed: u64,
    config_hash: String,
}

impl OutputDir {
    pub fn new(root: &Path, command: &str, cfg: &ExperimentConfig, master_seed: u64) -> Result<Self, HarnessError> {
        fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            profile: cfg.profile.label().to_string(),
            master_seed,
            config_hash: config_hash(cfg),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `rows` under a header row, plus `<stem>.meta.json`.
    pub fn write_csv<T: Serialize>(&self, name: &str, columns: &[&str], rows: &[T]) -> Result<PathBuf, HarnessError> {
        let path = self.path(name);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(|e| HarnessError::Csv(path.clone(), e))?;
        w.write_record(columns).map_err(|e| HarnessError::Csv(path.clone(), e))?;
        for r in rows {
            w.serialize(r).map_err(|e| HarnessError::Csv(path.clone(), e))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        let meta = RunMeta {
            command: self.command.clone(),
            profile: self.profile.clone(),
            master_seed: self.master_seed,
            config_hash: self.config_hash.clone(),
            build_id: BUILD_ID.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: rows.len(),
        };
        write_json(&meta_path(&path), &meta)?;
        Ok(path)
    }
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Json(path.to_path_buf(), e))?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|_| HarnessError::MissingArtifact(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Json(path.to_path_buf(), e))
}
