//! Rotation-equivariance checker: runs the same algorithm on `f` and on the
//! rotated objective `f^(R)`, sharing the batch sequence, and reports how far
//! `R w_t` drifts from the rotated run's iterates.

use serde::Serialize;

use super::steps::{adamw_step, sgd_step};
use super::{BaseOptimizer, OptimError, OptimizerConfig, OptimizerState};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::testbeds::Problem;

/// Largest problem dimension the checker will hold a dense rotation for.
pub const DENSE_ROTATION_DIM_LIMIT: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub alg: BaseOptimizer,
    pub steps: u64,
    /// `max_t |R w_t - w_t^rot|_inf` over the whole trajectory.
    pub max_discrepancy: f64,
    pub per_step: Vec<f64>,
}

/// Runs `alg` on `f` from `w0` and on `f^(R): w -> f(R^T w)` from `R w0`
/// with the same batch sequence; returns both iterate paths (plain first,
/// rotated-run second, each `steps + 1` long including the start).
pub(crate) fn paired_rotated_paths(
    alg: BaseOptimizer,
    problem: &dyn Problem,
    rotation: &DenseMatrix,
    steps: u64,
    cfg: &OptimizerConfig,
    batch_seed: u64,
) -> Result<(Vec<DenseVector>, Vec<DenseVector>), OptimError> {
    let dim = problem.dim();
    if rotation.rows() != dim || rotation.cols() != dim {
        return Err(OptimError::LengthMismatch {
            what: "dense rotation",
            expected: dim,
            got: rotation.rows(),
        });
    }

    let step = |cfg: &OptimizerConfig,
                state: &mut OptimizerState,
                w: &mut DenseVector,
                g: &DenseVector|
     -> Result<(), OptimError> {
        match alg {
            BaseOptimizer::AdamW => adamw_step(cfg, state, w, g).map(|_| ()),
            BaseOptimizer::Sgd => sgd_step(cfg, state, w, g).map(|_| ()),
        }
    };

    let w0 = problem.initial_point();
    let mut w = w0.clone();
    let mut w_rot = rotation.matvec(&w0);
    let mut state = OptimizerState::new(dim);
    let mut state_rot = OptimizerState::new(dim);
    let mut stream = problem.batch_stream(batch_seed);

    let mut plain = Vec::with_capacity(steps as usize + 1);
    let mut rotated = Vec::with_capacity(steps as usize + 1);
    plain.push(w.clone());
    rotated.push(w_rot.clone());

    for _ in 0..steps {
        let batch = stream.next_batch();
        let g = problem.grad(&w, &batch);
        step(cfg, &mut state, &mut w, &g)?;

        // grad of f^(R) at v is R grad f(R^T v), same batch
        let unrotated_point = rotation.matvec_transposed(&w_rot);
        let g_rot = rotation.matvec(&problem.grad(&unrotated_point, &batch));
        step(cfg, &mut state_rot, &mut w_rot, &g_rot)?;

        plain.push(w.clone());
        rotated.push(w_rot.clone());
    }
    Ok((plain, rotated))
}

/// Definition-level equivariance check; see module docs. Refuses problems
/// too large to hold a dense `d x d` rotation.
pub fn check_equivariance(
    alg: BaseOptimizer,
    problem: &dyn Problem,
    rotation: &DenseMatrix,
    steps: u64,
    cfg: &OptimizerConfig,
    batch_seed: u64,
) -> Result<EquivarianceReport, OptimError> {
    cfg.validate()?;
    let dim = problem.dim();
    if dim > DENSE_ROTATION_DIM_LIMIT {
        return Err(OptimError::DimensionTooLarge {
            dim,
            limit: DENSE_ROTATION_DIM_LIMIT,
        });
    }
    let residual = rotation.orthogonality_residual();
    if residual > 1e-10 {
        return Err(OptimError::Rotation(
            crate::rotations::RotationError::NotOrthogonal { residual },
        ));
    }

    let (plain, rotated) = paired_rotated_paths(alg, problem, rotation, steps, cfg, batch_seed)?;
    let per_step: Vec<f64> = plain
        .iter()
        .zip(&rotated)
        .map(|(w, w_rot)| rotation.matvec(w).max_abs_diff(w_rot))
        .collect();
    let max_discrepancy = per_step.iter().cloned().fold(0.0, f64::max);
    Ok(EquivarianceReport {
        alg,
        steps,
        max_discrepancy,
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::haar_orthogonal;
    use crate::rng::stream_from_seed;
    use crate::testbeds::{make_quadratic, QuadraticSpec};

    fn planar_rotation(dim: usize, i: usize, j: usize, angle: f64) -> DenseMatrix {
        let mut r = DenseMatrix::identity(dim);
        r[(i, i)] = angle.cos();
        r[(j, j)] = angle.cos();
        r[(i, j)] = -angle.sin();
        r[(j, i)] = angle.sin();
        r
    }

    #[test]
    fn sgd_is_equivariant() {
        let problem = make_quadratic(&QuadraticSpec {
            noise: 0.05,
            ..QuadraticSpec::axis_aligned(vec![1.0, 3.0, 10.0, 30.0])
        })
        .unwrap();
        let mut rng = stream_from_seed(17);
        let cfg = OptimizerConfig {
            alpha: 0.02,
            momentum: 0.9,
            ..Default::default()
        };
        for trial in 0..5 {
            let r = haar_orthogonal(4, &mut rng).unwrap();
            let report =
                check_equivariance(BaseOptimizer::Sgd, &problem, &r, 100, &cfg, trial).unwrap();
            assert!(
                report.max_discrepancy < 1e-9,
                "trial {trial}: {}",
                report.max_discrepancy
            );
        }
    }

    #[test]
    fn adamw_identity_rotation_is_exact() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![1.0, 100.0])).unwrap();
        let r = DenseMatrix::identity(2);
        let report = check_equivariance(
            BaseOptimizer::AdamW,
            &problem,
            &r,
            50,
            &OptimizerConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(report.max_discrepancy, 0.0);
    }

    #[test]
    fn adamw_breaks_on_45_degree_rotation() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![1.0, 100.0])).unwrap();
        let r = planar_rotation(2, 0, 1, std::f64::consts::FRAC_PI_4);
        let cfg = OptimizerConfig {
            alpha: 0.05,
            ..Default::default()
        };
        let adam = check_equivariance(BaseOptimizer::AdamW, &problem, &r, 200, &cfg, 0).unwrap();
        assert!(adam.max_discrepancy > 1e-2, "{}", adam.max_discrepancy);
        let sgd_cfg = OptimizerConfig {
            alpha: 0.01,
            momentum: 0.9,
            ..Default::default()
        };
        let sgd = check_equivariance(BaseOptimizer::Sgd, &problem, &r, 200, &sgd_cfg, 0).unwrap();
        assert!(sgd.max_discrepancy < 1e-9, "{}", sgd.max_discrepancy);
    }

    #[test]
    fn refuses_oversized_problems() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![1.0; 300])).unwrap();
        let r = DenseMatrix::identity(300);
        assert!(matches!(
            check_equivariance(
                BaseOptimizer::Sgd,
                &problem,
                &r,
                1,
                &OptimizerConfig::default(),
                0
            ),
            Err(OptimError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn refuses_non_orthogonal_matrices() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![1.0, 2.0])).unwrap();
        let mut r = DenseMatrix::identity(2);
        r[(0, 1)] = 0.5;
        assert!(check_equivariance(
            BaseOptimizer::Sgd,
            &problem,
            &r,
            1,
            &OptimizerConfig::default(),
            0
        )
        .is_err());
    }
}
