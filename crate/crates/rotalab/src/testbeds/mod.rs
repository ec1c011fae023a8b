//! Deterministic differentiable test problems with gradient and
//! Hessian-vector oracles and full layout metadata.

mod mlp;
mod quadratic;
mod trajectories;

pub use mlp::{make_mlp, Activation, MlpProblem, MlpSpec, MlpTask};
pub use quadratic::{make_quadratic, Basis, QuadraticProblem, QuadraticSpec, Spectrum};
pub use trajectories::{paired_trajectories, PairedTrajectorySettings, PathPair};

use rand::RngCore;
use thiserror::Error;

use crate::linalg::DenseVector;
use crate::rng::{stream_from_seed, RngStream};
use crate::rotations::ParamLayout;

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Rotation(#[from] crate::rotations::RotationError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// One stochastic minibatch, identified by a nonce. Problems derive their
/// noise or example indices from the nonce, so two runs sharing a stream see
/// identical batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batch {
    pub nonce: u64,
}

/// Infinite seeded sequence of batches.
#[derive(Debug, Clone)]
pub struct BatchStream {
    rng: RngStream,
}

impl BatchStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream_from_seed(seed),
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        Batch {
            nonce: self.rng.next_u64(),
        }
    }
}

impl Iterator for BatchStream {
    type Item = Batch;
    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

/// A differentiable objective with stochastic minibatches.
///
/// `value`/`grad` evaluate the minibatch objective `f_B`; averaging
/// `grad(w, ·)` over the stream recovers the full gradient. `hvp` is exact
/// where the Hessian is known in closed form and a central finite difference
/// of `grad` otherwise.
pub trait Problem {
    fn layout(&self) -> &ParamLayout;

    fn dim(&self) -> usize {
        self.layout().total_dim()
    }

    /// Deterministic starting point for training runs.
    fn initial_point(&self) -> DenseVector;

    fn value(&self, w: &DenseVector, batch: &Batch) -> f64;

    fn grad(&self, w: &DenseVector, batch: &Batch) -> DenseVector;

    fn hvp(&self, w: &DenseVector, dir: &DenseVector, batch: &Batch) -> DenseVector;

    /// The full-data objective (no minibatch noise); what trajectory loss
    /// columns record.
    fn full_value(&self, w: &DenseVector) -> f64;

    fn batch_stream(&self, seed: u64) -> BatchStream {
        BatchStream::new(seed)
    }
}
