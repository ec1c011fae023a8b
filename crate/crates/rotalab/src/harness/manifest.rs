//! Run manifests: enough to replay an experiment byte-for-byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

pub const MANIFEST_KIND: &str = "rotalab-manifest";

/// One (variant x seed) run inside a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub variant: String,
    pub master_seed: u64,
    pub rep_index: usize,
    /// Stable hash of (master seed, variant, repetition); identifies the run.
    pub run_seed: u64,
    /// Shared across variants so loss curves stay comparable.
    pub batch_seed: u64,
    pub rotation_seed: u64,
    pub directory: String,
    pub files: Vec<String>,
    pub final_loss: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub library_version: String,
    pub config_sha256: String,
    pub config_text: String,
    pub wall_clock_seconds: f64,
    pub runs: Vec<RunEntry>,
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(config_text: &str) -> Self {
        Self {
            kind: MANIFEST_KIND.to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text),
            config_text: config_text.to_string(),
            wall_clock_seconds: 0.0,
            runs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.kind != MANIFEST_KIND {
            return Err(HarnessError::Validation {
                key: "manifest.kind".into(),
                message: format!("expected {MANIFEST_KIND}, got '{}'", manifest.kind),
            });
        }
        if manifest.config_sha256 != sha256_hex(&manifest.config_text) {
            return Err(HarnessError::Validation {
                key: "manifest.config_sha256".into(),
                message: "embedded config does not match its hash".into(),
            });
        }
        Ok(manifest)
    }
}
