//! Run manifests: written before any other side effect, immutable
//! afterwards.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_unix: u64,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            outputs: Vec::new(),
            wall_clock_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
        }
    }

    pub fn with_outputs(mut self, outputs: Vec<PathBuf>) -> Self {
        self.outputs = outputs;
        self
    }

    /// Refuses to overwrite declared outputs unless `force`, then writes
    /// the manifest itself. Call before any other side effect.
    pub fn write_guarded(&self, path: &Path, force: bool) -> Result<()> {
        let mut all = self.outputs.clone();
        all.push(path.to_path_buf());
        if !force {
            for out in &all {
                if out.exists() {
                    bail!(nocturne_core::Error::config(format!(
                        "output {} already exists (use --force to overwrite)",
                        out.display()
                    )));
                }
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Serializes any config into the manifest's `config` field.
pub fn config_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}
