//! Paired 2-D trajectories of SGD-momentum and AdamW on a quadratic, before
//! and after a planar rotation of the objective.

use serde::Serialize;

use super::{make_quadratic, Problem, QuadraticSpec, TestbedError};
use crate::linalg::DenseMatrix;
use crate::optimizers::{paired_rotated_paths, BaseOptimizer, OptimError, OptimizerConfig};

#[derive(Debug, Clone)]
pub struct PairedTrajectorySettings {
    pub angle: f64,
    pub eigenvalues: [f64; 2],
    pub start: [f64; 2],
    pub steps: u64,
}

impl Default for PairedTrajectorySettings {
    fn default() -> Self {
        Self {
            angle: std::f64::consts::FRAC_PI_4,
            eigenvalues: [1.0, 100.0],
            start: [1.0, 1.0],
            steps: 200,
        }
    }
}

/// Unrotated and rotated-run paths for one algorithm, with their losses.
/// The rotated path lives in the rotated frame; compare it against
/// `R * plain` pointwise.
#[derive(Debug, Clone, Serialize)]
pub struct PathPair {
    pub algorithm: String,
    pub plain: Vec<[f64; 2]>,
    pub rotated: Vec<[f64; 2]>,
    pub plain_loss: Vec<f64>,
    pub rotated_loss: Vec<f64>,
}

fn planar_rotation(angle: f64) -> DenseMatrix {
    DenseMatrix::from_vec(
        2,
        2,
        vec![angle.cos(), -angle.sin(), angle.sin(), angle.cos()],
    )
    .unwrap()
}

/// Runs the four trajectories (SGD-momentum / AdamW, unrotated / rotated).
pub fn paired_trajectories(
    cfg_sgd: &OptimizerConfig,
    cfg_adam: &OptimizerConfig,
    settings: &PairedTrajectorySettings,
) -> Result<(PathPair, PathPair), TestbedError> {
    let spec = QuadraticSpec {
        minimizer: None,
        ..QuadraticSpec::axis_aligned(settings.eigenvalues.to_vec())
    };
    let mut problem = make_quadratic(&spec)?;
    problem.set_initial_point(settings.start.to_vec().into());
    let rotation = planar_rotation(settings.angle);

    let run = |alg: BaseOptimizer, cfg: &OptimizerConfig| -> Result<PathPair, OptimError> {
        let (plain, rotated) =
            paired_rotated_paths(alg, &problem, &rotation, settings.steps, cfg, 0)?;
        let plain_loss: Vec<f64> = plain.iter().map(|w| problem.full_value(w)).collect();
        // f^(R)(w) = f(R^T w)
        let rotated_loss: Vec<f64> = rotated
            .iter()
            .map(|w| problem.full_value(&rotation.matvec_transposed(w)))
            .collect();
        Ok(PathPair {
            algorithm: match alg {
                BaseOptimizer::Sgd => "sgd-momentum".into(),
                BaseOptimizer::AdamW => "adamw".into(),
            },
            plain: plain.iter().map(|w| [w[0], w[1]]).collect(),
            rotated: rotated.iter().map(|w| [w[0], w[1]]).collect(),
            plain_loss,
            rotated_loss,
        })
    };

    let sgd =
        run(BaseOptimizer::Sgd, cfg_sgd).map_err(|e| TestbedError::InvalidSpec(e.to_string()))?;
    let adam = run(BaseOptimizer::AdamW, cfg_adam)
        .map_err(|e| TestbedError::InvalidSpec(e.to_string()))?;
    Ok((sgd, adam))
}
