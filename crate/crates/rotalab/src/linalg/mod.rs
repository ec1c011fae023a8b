//! Dense double-precision linear algebra: matrices, vectors, permutations,
//! Householder QR, one-sided Jacobi SVD, and the Haar-orthogonal sampler.

mod matrix;
mod perm;
mod qr;
mod svd;

pub use matrix::{DenseMatrix, DenseVector};
pub use perm::{random_permutation, Permutation};
pub use qr::{haar_orthogonal, householder_qr};
pub use svd::svd_full;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid dimension {dim} for {op}")]
    InvalidDimension { op: &'static str, dim: usize },
    #[error("shape mismatch: {rows}x{cols} matrix cannot hold {len} entries")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("{op}: expected length {expected}, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op} requires rows >= cols, got {rows}x{cols}")]
    NotTall {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("SVD did not converge after {sweeps} sweeps (residual {residual:.3e})")]
    SvdNotConverged { sweeps: usize, residual: f64 },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("index map is not a bijection (value {value} at position {position})")]
    NotBijective { value: usize, position: usize },
}
