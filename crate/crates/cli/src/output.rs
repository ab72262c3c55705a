//! Run artifacts: the manifest and CSV tables tagged with hash and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Hex SHA-256 of the canonical configuration text.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub phi4_cli: &'static str,
    pub phi4_core: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub passed: bool,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

/// A CSV file whose rows all start with the config hash and seed.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
    hash: String,
    seed: u64,
}

impl Table {
    pub fn create(dir: &Path, name: &str, columns: &[&str], hash: &str, seed: u64) -> std::io::Result<Self> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path)?;
        let mut header = vec!["config_hash", "seed"];
        header.extend_from_slice(columns);
        writer.write_record(&header)?;
        Ok(Self {
            path,
            writer,
            hash: hash.to_string(),
            seed,
        })
    }

    pub fn row(&mut self, fields: &[String]) -> std::io::Result<()> {
        let mut rec = vec![self.hash.clone(), self.seed.to_string()];
        rec.extend_from_slice(fields);
        self.writer.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Formats a float so that reruns print identical text.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join("manifest.json"), text + "\n")
}
