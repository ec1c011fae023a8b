//! Rotation specs compiled into orthogonal operators over the flat
//! parameter vector: the four random scopes, block/permutation/residual
//! composition, and the dynamic per-layer SVD rotation.

mod compiled;
mod layout;
pub mod snapshot;

pub use compiled::{
    compile, BlockSet, CompiledKind, CompiledRotation, PartitionOp, RotationSpec, SvdLayerOp,
};
pub use layout::{partition_indices, Layer, LayerKind, LayerSpec, ParamLayout, Scope};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RotationError {
    #[error("unknown layer '{0}' in mask")]
    UnknownLayer(String),
    #[error("unknown scope '{0}'")]
    UnknownScope(String),
    #[error("layer mask selects no parameters")]
    EmptyMaskSelection,
    #[error("duplicate layer name '{0}'")]
    DuplicateLayer(String),
    #[error("layer '{0}' has zero parameters")]
    EmptyLayer(String),
    #[error("invalid rotation spec: {0}")]
    InvalidSpec(String),
    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("matrix is not orthogonal (residual {residual:.3e})")]
    NotOrthogonal { residual: f64 },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}
