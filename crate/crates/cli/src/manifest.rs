//! Run manifests written next to every artifact a command produces.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use csiforge::binio::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<FileDigest> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub toolkit_version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_s: f64,
    /// True when a previous manifest at the same location recorded the same
    /// config and input hashes.
    pub reproduction: bool,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub struct ManifestBuilder {
    seed: Option<u64>,
    config_hash: String,
    inputs: Vec<FileDigest>,
}

impl ManifestBuilder {
    /// `config` is any serializable description of the command's settings.
    pub fn new(config: &impl Serialize, seed: Option<u64>) -> Self {
        let json = serde_json::to_vec(config).expect("config serializes");
        ManifestBuilder {
            seed,
            config_hash: sha256_hex(&json),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Hashes the outputs and writes the manifest beside `outputs[0]`.
    /// Returns whether the run reproduced the previous one.
    pub fn write(self, outputs: &[&Path], elapsed: Duration) -> Result<bool> {
        let primary = outputs.first().context("manifest needs at least one output")?;
        let path = manifest_path(primary);
        let outputs = outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
        let reproduction = std::fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
            .is_some_and(|prev| prev.config_hash == self.config_hash && prev.inputs == self.inputs);
        let m = RunManifest {
            command: std::env::args().collect(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_hash: self.config_hash,
            inputs: self.inputs,
            outputs,
            duration_s: elapsed.as_secs_f64(),
            reproduction,
        };
        let mut json = serde_json::to_vec_pretty(&m)?;
        json.push(b'\n');
        write_atomic(&path, &json)?;
        Ok(reproduction)
    }
}
