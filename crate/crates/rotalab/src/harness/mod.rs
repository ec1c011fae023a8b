//! Experiment harness: strict config files, deterministic seed derivation,
//! CSV/JSON emission, and the four `rotalab` commands.

pub mod commands;
mod config;
pub mod csvio;
mod manifest;

pub use config::{
    DiagnoseSection, EquivarianceRotation, EquivarianceSection, ExperimentConfig, ProblemConfig,
    RunMode, RunSection, TrajectoriesSection,
};
pub use manifest::{sha256_hex, RunEntry, RunManifest};

use thiserror::Error;

/// Environment variable that re-roots relative `out_dir` paths.
pub const OUT_ROOT_ENV: &str = "ROTALAB_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config value for '{key}': {message}")]
    Validation { key: String, message: String },
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error(transparent)]
    Rotation(#[from] crate::rotations::RotationError),
    #[error(transparent)]
    Testbed(#[from] crate::testbeds::TestbedError),
    #[error(transparent)]
    Optim(#[from] crate::optimizers::OptimError),
    #[error(transparent)]
    Diagnostics(#[from] crate::diagnostics::DiagnosticsError),
}

impl HarnessError {
    /// 2 for configuration or input problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
