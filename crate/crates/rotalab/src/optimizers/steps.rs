//! Single optimizer steps: AdamW, heavy-ball SGD, and their rotated
//! variants.
//!
//! The rotated pipeline keeps the weights in the standard basis: the
//! gradient is rotated, moments live and the raw update is formed in the
//! rotated space, the update is rotated back, and weight decay is applied to
//! the unrotated weights.

use super::{BaseOptimizer, OptimError, OptimizerConfig, OptimizerState};
use crate::linalg::DenseVector;
use crate::rotations::CompiledRotation;

fn check_gradient(g: &DenseVector, dim: usize) -> Result<(), OptimError> {
    if g.len() != dim {
        return Err(OptimError::LengthMismatch {
            what: "gradient",
            expected: dim,
            got: g.len(),
        });
    }
    if let Some(index) = g.first_nonfinite() {
        return Err(OptimError::NonFiniteGradient { index });
    }
    Ok(())
}

/// Moment update and raw AdamW update direction, in whatever basis `g`
/// lives. Increments the step counter.
fn adamw_update(cfg: &OptimizerConfig, state: &mut OptimizerState, g: &DenseVector) -> DenseVector {
    let t = state.t + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut update = DenseVector::zeros(g.len());
    for i in 0..g.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        update[i] = m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    state.t = t;
    update
}

/// Heavy-ball buffer update; returns the update direction.
fn sgd_update(cfg: &OptimizerConfig, state: &mut OptimizerState, g: &DenseVector) -> DenseVector {
    for i in 0..g.len() {
        state.momentum_buf[i] = cfg.momentum * state.momentum_buf[i] + g[i];
    }
    state.t += 1;
    state.momentum_buf.clone()
}

fn apply_update(cfg: &OptimizerConfig, w: &mut DenseVector, update: &DenseVector) {
    for i in 0..w.len() {
        w[i] = w[i] - cfg.alpha * update[i] - cfg.alpha * cfg.lambda * w[i];
    }
}

/// One AdamW step; epsilon sits outside the square root and weight decay is
/// decoupled. Returns the raw update direction (decay excluded).
pub fn adamw_step(
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
    w: &mut DenseVector,
    g: &DenseVector,
) -> Result<DenseVector, OptimError> {
    check_gradient(g, w.len())?;
    let update = adamw_update(cfg, state, g);
    apply_update(cfg, w, &update);
    Ok(update)
}

/// One heavy-ball SGD step (`momentum = 0` is plain SGD); decay decoupled
/// like the AdamW variant so the identity-rotation collapse is exact.
pub fn sgd_step(
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
    w: &mut DenseVector,
    g: &DenseVector,
) -> Result<DenseVector, OptimError> {
    check_gradient(g, w.len())?;
    let update = sgd_update(cfg, state, g);
    apply_update(cfg, w, &update);
    Ok(update)
}

/// One rotated step: moments are updated with the rotated gradient, the raw
/// update is rotated back with the transpose, and weight decay stays in the
/// original space. Returns the rotated-back raw update (decay excluded).
///
/// The moment vectors *live in the rotated basis*; callers refreshing an SVD
/// rotation decide whether to keep or re-project them.
pub fn rotated_step(
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
    rot: &CompiledRotation,
    w: &mut DenseVector,
    g: &DenseVector,
    base: BaseOptimizer,
) -> Result<DenseVector, OptimError> {
    check_gradient(g, w.len())?;
    let rotated_g = rot.apply(g)?;
    let update = match base {
        BaseOptimizer::AdamW => adamw_update(cfg, state, &rotated_g),
        BaseOptimizer::Sgd => sgd_update(cfg, state, &rotated_g),
    };
    let update_back = rot.apply_inverse(&update)?;
    apply_update(cfg, w, &update_back);
    Ok(update_back)
}
