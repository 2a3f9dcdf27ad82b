//! Run manifests: enough to reproduce any run byte-for-byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use newsalpha::hash::fnv1a64;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Hash of the resolved config JSON below.
    pub config_hash: u64,
    /// The full resolved config, embedded so a rerun needs no other files.
    pub resolved_config: serde_json::Value,
    /// Input file path -> content hash at run time.
    pub input_hashes: BTreeMap<String, u64>,
    pub seeds: Vec<u64>,
    pub output_paths: Vec<String>,
    pub wall_clock_secs: f64,
}

pub struct ManifestBuilder {
    command: String,
    resolved_config: serde_json::Value,
    input_hashes: BTreeMap<String, u64>,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, resolved_config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            resolved_config,
            input_hashes: BTreeMap::new(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading input {}", path.display()))?;
        self.input_hashes
            .insert(path.display().to_string(), fnv1a64(&bytes));
        Ok(())
    }

    pub fn record_seeds(&mut self, seeds: &[u64]) {
        self.seeds = seeds.to_vec();
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Write `manifest.json` atomically under `out_dir`.
    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let config_json =
            serde_json::to_string(&self.resolved_config).expect("config serializes");
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: fnv1a64(config_json.as_bytes()),
            resolved_config: self.resolved_config,
            input_hashes: self.input_hashes,
            seeds: self.seeds,
            output_paths: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join("manifest.json");
        write_atomic(
            &path,
            serde_json::to_string_pretty(&manifest)
                .expect("manifest serializes")
                .as_bytes(),
        )?;
        Ok(path)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).context("parsing manifest")
    }

    /// Re-hash the recorded inputs and fail if any changed since the run.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, expected) in &self.input_hashes {
            let bytes = std::fs::read(path)
                .with_context(|| format!("manifest input {path} is missing"))?;
            let got = fnv1a64(&bytes);
            if got != *expected {
                bail!("manifest input {path} changed (hash {got:#x}, recorded {expected:#x})");
            }
        }
        Ok(())
    }
}

/// Write via temp file + rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
