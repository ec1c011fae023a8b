//! Rotation experiments for first-order optimizers.
//!
//! The crate rotates the parameter space seen by AdamW-style optimizers and
//! measures what that does to convergence and to rotation-dependent
//! quantities of the loss landscape:
//!
//! - [`linalg`] — dense double-precision matrices, Householder QR, one-sided
//!   Jacobi SVD, and Haar-orthogonal sampling.
//! - [`rotations`] — scoped random rotations (global / layer / output /
//!   input), dynamic per-layer SVD rotations, and binary snapshots.
//! - [`optimizers`] — SGD with momentum, AdamW, the rotated stepping
//!   pipeline, and a rotation-equivariance checker.
//! - [`testbeds`] — quadratics and small MLPs with gradient and
//!   Hessian-vector oracles.
//! - [`diagnostics`] — L-infinity gradient bounds, Hessian row sampling with
//!   neuron/layer/other partitions, and the (1,1)-norm estimator.
//! - [`harness`] — config files, deterministic seed management, CSV/JSON
//!   emission, and the `rotalab` CLI commands.
//!
//! Randomness always flows through explicit [`rng::RngStream`] values
//! (ChaCha12), so every experiment replays bit-identically from its seeds.

pub mod diagnostics;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod rng;
pub mod rotations;
pub mod testbeds;
