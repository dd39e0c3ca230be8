//! Output files and their provenance sidecars.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `<path>.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
pub struct Input {
    pub role: String,
    /// File hash, or `synthetic:<seed>` for generated data.
    pub id: String,
}

#[derive(Debug, Serialize)]
struct Meta<'a, E: Serialize> {
    command: &'a str,
    seed: u64,
    output_sha256: String,
    inputs: &'a [Input],
    extra: E,
    config: &'a RunConfig,
}

/// Identifies the data source named by the config.
pub fn data_input(cfg: &RunConfig) -> Result<Input> {
    let id = match &cfg.data.path {
        Some(p) => file_sha256(p)?,
        None => format!("synthetic:{}", cfg.data.synthetic_seed),
    };
    Ok(Input { role: "data".into(), id })
}

pub fn file_input(role: &str, path: &Path) -> Result<Input> {
    Ok(Input {
        role: role.into(),
        id: file_sha256(path)?,
    })
}

pub struct Writer<'a> {
    pub command: &'a str,
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub inputs: Vec<Input>,
}

impl Writer<'_> {
    /// Writes `bytes` to `path` plus a sidecar with config, seed and hashes.
    pub fn write(&self, path: &Path, bytes: &[u8], extra: impl Serialize) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let meta = Meta {
            command: self.command,
            seed: self.seed,
            output_sha256: sha256_hex(bytes),
            inputs: &self.inputs,
            extra,
            config: self.cfg,
        };
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&meta)? + "\n";
        std::fs::write(&side, text).with_context(|| format!("writing {}", side.display()))?;
        Ok(())
    }
}
