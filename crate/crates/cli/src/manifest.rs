use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use meshsr_core::meshcore::dataset_files;
use meshsr_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// File name of the run record written into every output directory.
pub const RUN_MANIFEST: &str = "run_manifest.json";

/// What ran, with which inputs, and what it produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 over the dataset files in their fixed order.
    pub dataset_sha256: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub artifacts: Vec<PathBuf>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Hex SHA-256 of the dataset directory contents. Each file contributes its
/// name, its length and its bytes.
pub fn dataset_fingerprint(dir: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for path in dataset_files(dir) {
        let bytes = fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        code: 1,
        message: format!("serializing {}: {e}", path.display()),
    })?;
    meshsr_core::train::write_text(path, &(text + "\n"))?;
    Ok(())
}

impl RunManifest {
    pub fn write(mut self, dir: &Path) -> Result<(), CliError> {
        self.finished_unix = now();
        write_json(&dir.join(RUN_MANIFEST), &self)
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}
