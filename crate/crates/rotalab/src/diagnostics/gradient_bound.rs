//! Empirical bound on the L-infinity norm of rotated stochastic gradients.

use serde::Serialize;

use super::DiagnosticsError;
use crate::linalg::DenseVector;
use crate::rotations::CompiledRotation;
use crate::testbeds::Problem;

/// `C~ = max_i |grad_rot(B_i)|_inf` over the recorded trials.
#[derive(Debug, Clone, Serialize)]
pub struct GradBoundReport {
    pub bound: f64,
    pub trials: usize,
    pub seed: u64,
    pub probe_rotation: String,
    pub checkpoint: String,
    pub per_trial: Vec<f64>,
}

/// Draws `trials` minibatches from the problem's seeded stream, rotates each
/// gradient at the fixed point `w`, and keeps the running maximum of the
/// infinity norms. Deterministic given `seed`.
pub fn linf_gradient_bound(
    problem: &dyn Problem,
    w: &DenseVector,
    rot: &CompiledRotation,
    trials: usize,
    seed: u64,
    probe_rotation: &str,
    checkpoint: &str,
) -> Result<GradBoundReport, DiagnosticsError> {
    if trials == 0 {
        return Err(DiagnosticsError::EmptyInput("linf_gradient_bound"));
    }
    let mut stream = problem.batch_stream(seed);
    let mut per_trial = Vec::with_capacity(trials);
    let mut bound = 0.0f64;
    for trial in 0..trials {
        let batch = stream.next_batch();
        let g = problem.grad(w, &batch);
        if g.first_nonfinite().is_some() {
            return Err(DiagnosticsError::NonFiniteTrial { trial });
        }
        let rotated = rot.apply(&g)?;
        let norm = rotated.norm_inf();
        per_trial.push(norm);
        bound = bound.max(norm);
    }
    Ok(GradBoundReport {
        bound,
        trials,
        seed,
        probe_rotation: probe_rotation.to_string(),
        checkpoint: checkpoint.to_string(),
        per_trial,
    })
}
