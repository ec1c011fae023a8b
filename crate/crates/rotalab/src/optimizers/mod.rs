//! SGD with momentum, AdamW, the rotated stepping pipeline, and the
//! rotation-equivariance checker.

mod equivariance;
mod steps;
mod training;

pub(crate) use equivariance::paired_rotated_paths;
pub use equivariance::{check_equivariance, EquivarianceReport, DENSE_ROTATION_DIM_LIMIT};
pub use steps::{adamw_step, rotated_step, sgd_step};
pub use training::{run_training, RefreshRecord, RunOutcome, RunSettings, StepRecord, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseVector;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("problem dimension {dim} exceeds the dense-rotation limit of {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rotation(#[from] crate::rotations::RotationError),
}

/// Which base algorithm a rotated step wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseOptimizer {
    AdamW,
    Sgd,
}

impl std::str::FromStr for BaseOptimizer {
    type Err = OptimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adamw" => Ok(BaseOptimizer::AdamW),
            "sgd" => Ok(BaseOptimizer::Sgd),
            other => Err(OptimError::InvalidConfig(format!(
                "unknown optimizer '{other}' (expected adamw or sgd)"
            ))),
        }
    }
}

/// Learning-rate schedule; cosine mirrors the usual warmup-then-decay shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    Cosine { warmup: u64, min_alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight-decay coefficient, applied in the original space.
    pub lambda: f64,
    /// Heavy-ball coefficient (SGD only).
    pub momentum: f64,
    /// Global l2 clip applied to the unrotated gradient by training runs.
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-9,
            lambda: 0.0,
            momentum: 0.0,
            clip_norm: None,
            schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::InvalidConfig(
                "beta1 and beta2 must lie in [0, 1)".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(OptimError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(OptimError::InvalidConfig(
                "lambda must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OptimError::InvalidConfig(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(OptimError::InvalidConfig("alpha must be positive".into()));
        }
        Ok(())
    }

    /// Step size at step `t` of `total`.
    pub fn alpha_at(&self, t: u64, total: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.alpha,
            Schedule::Cosine { warmup, min_alpha } => {
                if t < warmup {
                    return self.alpha * (t + 1) as f64 / warmup as f64;
                }
                let span = total.saturating_sub(warmup).max(1) as f64;
                let progress = ((t - warmup) as f64 / span).clamp(0.0, 1.0);
                min_alpha
                    + 0.5
                        * (self.alpha - min_alpha)
                        * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Moment vectors and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: DenseVector,
    pub v: DenseVector,
    pub momentum_buf: DenseVector,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: DenseVector::zeros(dim),
            v: DenseVector::zeros(dim),
            momentum_buf: DenseVector::zeros(dim),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}
