//! Rotation-dependent assumption estimators: empirical L-infinity gradient
//! bounds, averaged Hessian rows with their neuron/layer/other split, the
//! (1,1)-norm estimate, and second-moment histograms.

mod gradient_bound;
mod hessian_rows;
mod histogram;

pub use gradient_bound::{linf_gradient_bound, GradBoundReport};
pub use hessian_rows::{
    hessian_row, one_one_norm_estimate, partition_row, row_contribution, HessianRowSample,
    NormEstimate, PartStats, RowPartition,
};
pub use histogram::{second_moment_histogram, Histogram};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("non-finite gradient in trial {trial}")]
    NonFiniteTrial { trial: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Rotation(#[from] crate::rotations::RotationError),
}
