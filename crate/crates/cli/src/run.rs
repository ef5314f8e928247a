//! Config loading, buffered artifacts and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hybridsim::systems::load_system;
use hybridsim::HybridSystemSpec;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub struct LoadedConfig {
    pub path: PathBuf,
    pub hash: String,
    pub spec: HybridSystemSpec,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::ConfigRead { path: path.into(), source })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::ConfigRead {
        path: path.into(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let spec = load_system(&text).map_err(|source| CliError::Config { path: path.into(), source })?;
    Ok(LoadedConfig { path: path.into(), hash: hex::encode(Sha256::digest(&bytes)), spec })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: String,
    config_hash: &'a str,
    seed: Option<u64>,
    parameters: serde_json::Value,
    artifacts: Vec<String>,
    wall_clock_seconds: f64,
}

/// Output files held in memory until the command has succeeded, so a
/// failed run leaves nothing behind.
pub struct Run {
    command: &'static str,
    config: PathBuf,
    hash: String,
    seed: Option<u64>,
    parameters: serde_json::Value,
    files: Vec<(PathBuf, Vec<u8>)>,
    started: Instant,
}

impl Run {
    pub fn new<P: Serialize>(command: &'static str, cfg: &LoadedConfig, seed: Option<u64>, params: &P) -> Self {
        Self {
            command,
            config: cfg.path.clone(),
            hash: cfg.hash.clone(),
            seed,
            parameters: serde_json::to_value(params).expect("parameters serialize"),
            files: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn add(&mut self, path: PathBuf, contents: Vec<u8>) {
        self.files.push((path, contents));
    }

    /// Writes every artifact, then the manifest at `manifest`.
    pub fn commit(self, manifest: PathBuf) -> Result<(), CliError> {
        let write = |path: &Path, data: &[u8]| -> Result<(), CliError> {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.into(), source })?;
            }
            std::fs::write(path, data).map_err(|source| CliError::Write { path: path.into(), source })
        };
        for (path, data) in &self.files {
            write(path, data)?;
        }
        let record = RunManifest {
            command: self.command,
            config: self.config.display().to_string(),
            config_hash: &self.hash,
            seed: self.seed,
            parameters: self.parameters,
            artifacts: self.files.iter().map(|(p, _)| p.display().to_string()).collect(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut json = serde_json::to_vec_pretty(&record).expect("manifest serializes");
        json.push(b'\n');
        write(&manifest, &json)
    }
}

/// `<path>.manifest.json` next to a single-file output.
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
