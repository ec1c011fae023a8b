//! Rotated training loop: weights stay in the standard basis while the
//! optimizer steps in the rotated space.

use serde::{Deserialize, Serialize};

use super::steps::rotated_step;
use super::{BaseOptimizer, OptimError, OptimizerConfig, OptimizerState};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::substream;
use crate::rotations::{compile, CompiledRotation, RotationSpec, Scope};
use crate::testbeds::Problem;

/// One trajectory row; `loss` is the full-data objective after the step and
/// `grad_inf_norm` the infinity norm of the (unrotated) gradient used by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_inf_norm: f64,
}

/// Off-diagonal mass ratio of one layer's rotated gradient at an SVD
/// refresh; should sit at machine scale right after refreshing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshRecord {
    pub step: u64,
    pub layer: String,
    pub offdiag_ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// `(step, w)` snapshots at the configured interval.
    pub snapshots: Vec<(u64, DenseVector)>,
    pub refreshes: Vec<RefreshRecord>,
    /// Present when the run stopped early; the records before the failure
    /// are kept.
    pub failure: Option<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub w: DenseVector,
    pub state: OptimizerState,
    pub rotation: CompiledRotation,
    /// Rotated-back raw update of the final step (weight decay excluded);
    /// the update-direction probe for row-contribution diagnostics.
    pub last_update: Option<DenseVector>,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub steps: u64,
    /// 0 disables snapshots.
    pub snapshot_every: u64,
    pub batch_seed: u64,
    pub base: BaseOptimizer,
    /// Map moments through old-inverse/new-forward at SVD refreshes instead
    /// of keeping their values; second moments are clamped at zero.
    pub reproject_moments: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            steps: 100,
            snapshot_every: 0,
            batch_seed: 0,
            base: BaseOptimizer::AdamW,
            reproject_moments: false,
        }
    }
}

/// Per-matrix-layer gradient matrices for the SVD layers of `rot`, extracted
/// from a flat gradient in stored shape.
pub fn svd_layer_grads(rot: &CompiledRotation, g: &DenseVector) -> Vec<DenseMatrix> {
    rot.svd_layers()
        .iter()
        .map(|op| {
            DenseMatrix::from_fn(op.out_dim, op.in_dim, |i, j| {
                g[op.start + i * op.in_dim + j]
            })
        })
        .collect()
}

fn clip_gradient(cfg: &OptimizerConfig, g: DenseVector) -> DenseVector {
    let Some(limit) = cfg.clip_norm else { return g };
    let norm = g.norm_l2();
    if norm <= limit || norm == 0.0 {
        return g;
    }
    let mut clipped = g;
    clipped.scale(limit / norm);
    clipped
}

/// Runs `steps` rotated optimizer steps on `problem`.
///
/// The rotation is compiled once from `spec`; SVD scopes refresh at steps
/// `t` with `t % refresh_interval == 0` (including `t = 0`) using the
/// current per-layer gradients. Deterministic given `(spec, cfg, settings)`
/// and the problem's own seeds.
pub fn run_training(
    problem: &dyn Problem,
    cfg: &OptimizerConfig,
    spec: &RotationSpec,
    settings: &RunSettings,
) -> Result<RunOutcome, OptimError> {
    cfg.validate()?;
    let mut rot_rng = substream(spec.seed, "rotation-compile", 0);
    let mut rotation = compile(spec, problem.layout(), &mut rot_rng)?;

    let dim = problem.dim();
    let mut w = problem.initial_point();
    let mut state = OptimizerState::new(dim);
    let mut stream = problem.batch_stream(settings.batch_seed);
    let mut trajectory = Trajectory::default();
    let mut last_update = None;

    for t in 0..settings.steps {
        let batch = stream.next_batch();
        let g = clip_gradient(cfg, problem.grad(&w, &batch));

        if spec.scope == Scope::Svd && t % spec.refresh_interval == 0 {
            let grads = svd_layer_grads(&rotation, &g);
            let refreshed = match rotation.svd_refresh(&grads) {
                Ok(r) => r,
                Err(err) => {
                    trajectory.failure = Some(format!("svd refresh at step {t}: {err}"));
                    break;
                }
            };
            record_refresh(&refreshed, &g, t, &mut trajectory.refreshes)?;
            if settings.reproject_moments {
                let unrotated_m = rotation.apply_inverse(&state.m)?;
                state.m = refreshed.apply(&unrotated_m)?;
                let unrotated_v = rotation.apply_inverse(&state.v)?;
                let mut v = refreshed.apply(&unrotated_v)?;
                for i in 0..v.len() {
                    v[i] = v[i].max(0.0);
                }
                state.v = v;
            }
            rotation = refreshed;
        }

        let step_cfg = OptimizerConfig {
            alpha: cfg.alpha_at(t, settings.steps),
            ..cfg.clone()
        };
        match rotated_step(&step_cfg, &mut state, &rotation, &mut w, &g, settings.base) {
            Ok(update) => last_update = Some(update),
            Err(err) => {
                trajectory.failure = Some(format!("step {t}: {err}"));
                break;
            }
        }

        trajectory.records.push(StepRecord {
            step: t + 1,
            loss: problem.full_value(&w),
            grad_inf_norm: g.norm_inf(),
        });
        if settings.snapshot_every > 0 && (t + 1) % settings.snapshot_every == 0 {
            trajectory.snapshots.push((t + 1, w.clone()));
        }
    }

    Ok(RunOutcome {
        trajectory,
        w,
        state,
        rotation,
        last_update,
    })
}

fn record_refresh(
    rot: &CompiledRotation,
    g: &DenseVector,
    step: u64,
    out: &mut Vec<RefreshRecord>,
) -> Result<(), OptimError> {
    let rotated = rot.apply(g)?;
    for op in rot.svd_layers() {
        let m = op.semantic_matrix(&rotated);
        let mut off = 0.0;
        let mut total = 0.0;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let x = m[(i, j)];
                total += x * x;
                if i != j {
                    off += x * x;
                }
            }
        }
        let ratio = if total == 0.0 {
            0.0
        } else {
            (off / total).sqrt()
        };
        out.push(RefreshRecord {
            step,
            layer: op.layer_name.clone(),
            offdiag_ratio: ratio,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbeds::{make_mlp, make_quadratic, MlpSpec, QuadraticSpec};

    #[test]
    fn zero_steps_leaves_everything_untouched() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![1.0, 4.0])).unwrap();
        let settings = RunSettings {
            steps: 0,
            ..Default::default()
        };
        let out = run_training(
            &problem,
            &OptimizerConfig::default(),
            &RotationSpec::default(),
            &settings,
        )
        .unwrap();
        assert!(out.trajectory.records.is_empty());
        assert_eq!(out.w.as_slice(), problem.initial_point().as_slice());
        assert_eq!(out.state.t, 0);
    }

    #[test]
    fn sgd_loss_sequence_is_rotation_invariant() {
        // Prop 1 through the full pipeline: scope none vs global match.
        let problem = make_quadratic(&QuadraticSpec {
            noise: 0.02,
            ..QuadraticSpec::axis_aligned(vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
        })
        .unwrap();
        let cfg = OptimizerConfig {
            alpha: 0.02,
            momentum: 0.9,
            ..Default::default()
        };
        let settings = RunSettings {
            steps: 150,
            base: BaseOptimizer::Sgd,
            batch_seed: 5,
            ..Default::default()
        };
        let plain = run_training(&problem, &cfg, &RotationSpec::default(), &settings).unwrap();
        let spec = RotationSpec {
            scope: Scope::Global,
            block_dim: 4,
            seed: 3,
            ..Default::default()
        };
        let rotated = run_training(&problem, &cfg, &spec, &settings).unwrap();
        for (a, b) in plain
            .trajectory
            .records
            .iter()
            .zip(&rotated.trajectory.records)
        {
            assert!(
                (a.loss - b.loss).abs() <= 1e-10 * a.loss.abs().max(1.0),
                "step {}: {} vs {}",
                a.step,
                a.loss,
                b.loss
            );
        }
    }

    #[test]
    fn deterministic_given_seeds() {
        let problem = make_quadratic(&QuadraticSpec {
            noise: 0.1,
            ..QuadraticSpec::axis_aligned(vec![1.0, 10.0, 100.0])
        })
        .unwrap();
        let spec = RotationSpec {
            scope: Scope::Global,
            block_dim: 2,
            seed: 11,
            ..Default::default()
        };
        let settings = RunSettings {
            steps: 60,
            batch_seed: 21,
            ..Default::default()
        };
        let a = run_training(&problem, &OptimizerConfig::default(), &spec, &settings).unwrap();
        let b = run_training(&problem, &OptimizerConfig::default(), &spec, &settings).unwrap();
        assert_eq!(a.w.as_slice(), b.w.as_slice());
        for (x, y) in a.trajectory.records.iter().zip(&b.trajectory.records) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        }
    }

    #[test]
    fn svd_refreshes_happen_on_schedule_and_diagonalize() {
        let problem = make_mlp(&MlpSpec::default()).unwrap();
        let spec = RotationSpec {
            scope: Scope::Svd,
            refresh_interval: 10,
            ..Default::default()
        };
        let settings = RunSettings {
            steps: 55,
            ..Default::default()
        };
        let out = run_training(&problem, &OptimizerConfig::default(), &spec, &settings).unwrap();
        let refresh_steps: Vec<u64> = out
            .trajectory
            .refreshes
            .iter()
            .map(|r| r.step)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        assert_eq!(refresh_steps, vec![0, 10, 20, 30, 40, 50]);
        for record in &out.trajectory.refreshes {
            assert!(
                record.offdiag_ratio < 1e-8,
                "layer {} at step {}: {}",
                record.layer,
                record.step,
                record.offdiag_ratio
            );
        }
        assert!(out.trajectory.failure.is_none());
    }

    #[test]
    fn snapshots_follow_interval() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![1.0, 2.0])).unwrap();
        let settings = RunSettings {
            steps: 10,
            snapshot_every: 4,
            ..Default::default()
        };
        let out = run_training(
            &problem,
            &OptimizerConfig::default(),
            &RotationSpec::default(),
            &settings,
        )
        .unwrap();
        let steps: Vec<u64> = out.trajectory.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(steps, vec![4, 8]);
    }

    #[test]
    fn reproject_keeps_second_moment_nonnegative() {
        let problem = make_mlp(&MlpSpec::default()).unwrap();
        let spec = RotationSpec {
            scope: Scope::Svd,
            refresh_interval: 5,
            ..Default::default()
        };
        let settings = RunSettings {
            steps: 25,
            reproject_moments: true,
            ..Default::default()
        };
        let out = run_training(&problem, &OptimizerConfig::default(), &spec, &settings).unwrap();
        assert!(out.state.v.iter().all(|&x| x >= 0.0));
        assert!(out.trajectory.failure.is_none());
    }

    #[test]
    fn clipping_applies_to_the_unrotated_gradient() {
        let problem = make_quadratic(&QuadraticSpec::axis_aligned(vec![50.0, 80.0])).unwrap();
        let cfg = OptimizerConfig {
            alpha: 0.01,
            clip_norm: Some(1.0),
            ..Default::default()
        };
        let spec = RotationSpec {
            scope: Scope::Global,
            block_dim: 2,
            seed: 9,
            ..Default::default()
        };
        let settings = RunSettings {
            steps: 5,
            ..Default::default()
        };
        let out = run_training(&problem, &cfg, &spec, &settings).unwrap();
        // recorded gradient norms are the clipped ones: |g|_inf <= |g|_2 <= 1
        for record in &out.trajectory.records {
            assert!(record.grad_inf_norm <= 1.0 + 1e-12);
        }
        // and clipping changes the trajectory relative to the unclipped run
        let unclipped = run_training(
            &problem,
            &OptimizerConfig {
                clip_norm: None,
                ..cfg.clone()
            },
            &spec,
            &settings,
        )
        .unwrap();
        assert!(out.w.max_abs_diff(&unclipped.w) > 0.0);
    }

    #[test]
    fn cosine_schedule_decays_to_min() {
        let cfg = OptimizerConfig {
            alpha: 1.0,
            schedule: crate::optimizers::Schedule::Cosine {
                warmup: 10,
                min_alpha: 0.1,
            },
            ..Default::default()
        };
        assert!((cfg.alpha_at(0, 100) - 0.1).abs() < 1e-12);
        assert!((cfg.alpha_at(9, 100) - 1.0).abs() < 1e-12);
        assert!(cfg.alpha_at(50, 100) < 1.0);
        assert!((cfg.alpha_at(99, 100) - 0.1).abs() < 0.01);
    }
}
