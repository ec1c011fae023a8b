//! The four `rotalab` commands: run, equivariance, diagnose,
//! sample-rotation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::config::{ExperimentConfig, RunMode};
use super::csvio::{self, format_f64};
use super::manifest::{RunEntry, RunManifest};
use super::{HarnessError, OUT_ROOT_ENV};
use crate::diagnostics::{
    hessian_row, linf_gradient_bound, one_one_norm_estimate, partition_row, row_contribution,
    second_moment_histogram, HessianRowSample,
};
use crate::linalg::{haar_orthogonal, DenseVector};
use crate::optimizers::{
    check_equivariance, run_training, BaseOptimizer, OptimizerState, RunOutcome, RunSettings,
};
use crate::rng::{derive_seed, substream};
use crate::rotations::snapshot::{find, read_snapshot, write_snapshot, Record};
use crate::rotations::{compile, CompiledRotation, ParamLayout, RotationSpec, Scope};
use crate::testbeds::{paired_trajectories, PairedTrajectorySettings};

/// SGD runs are gated at this discrepancy; see the equivariance command.
pub const SGD_EQUIVARIANCE_GATE: f64 = 1e-9;

/// Applies the `ROTALAB_OUT` override to relative output paths.
pub fn resolve_out_dir(configured: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if configured.is_relative() => PathBuf::from(root).join(configured),
        _ => configured.to_path_buf(),
    }
}

/// Accepts either a config file or a manifest produced by an earlier run;
/// manifests replay their embedded config.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let manifest = RunManifest::read(path)?;
        return ExperimentConfig::parse(&manifest.config_text);
    }
    ExperimentConfig::parse(&text)
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub completed: usize,
    pub failures: Vec<String>,
    /// (variant, master seed, final loss) for each finished run.
    pub final_losses: Vec<(String, u64, Option<f64>)>,
}

pub fn cmd_run(config_path: &Path) -> Result<RunSummary, HarnessError> {
    let cfg = load_config(config_path)?;
    let out_dir = resolve_out_dir(&cfg.run.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    match cfg.run.mode {
        RunMode::Train => run_train(&cfg, &out_dir),
        RunMode::Trajectories => run_trajectories(&cfg, &out_dir),
    }
}

fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    let problem = cfg.problem.build()?;
    let mut manifest = RunManifest::new(&cfg.text);
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut final_losses = Vec::new();

    for (rep, &master) in cfg.run.seeds.iter().enumerate() {
        for &variant in &cfg.run.variants {
            let run_seed = derive_seed(master, variant.as_str(), rep as u64);
            // batch stream shared across variants so losses are comparable
            let batch_seed = derive_seed(master, "batches", rep as u64);
            let rotation_seed = derive_seed(master, &format!("rotation-{variant}"), rep as u64);

            let spec = RotationSpec {
                scope: variant,
                seed: rotation_seed,
                ..cfg.rotation.clone()
            };
            let settings = RunSettings {
                steps: cfg.run.steps,
                snapshot_every: cfg.run.snapshot_every,
                batch_seed,
                base: cfg.base,
                reproject_moments: cfg.reproject_moments,
            };
            let outcome = run_training(problem.as_ref(), &cfg.optimizer, &spec, &settings)?;

            let dir_name = format!("{variant}-seed{master:04}");
            let run_dir = out_dir.join(&dir_name);
            std::fs::create_dir_all(&run_dir)?;
            let mut files = Vec::new();

            std::fs::write(
                run_dir.join("trajectory.csv"),
                csvio::trajectory_csv(&outcome.trajectory),
            )?;
            files.push("trajectory.csv".to_string());

            write_checkpoint(&run_dir.join("checkpoint.bin"), &outcome)?;
            files.push("checkpoint.bin".to_string());

            for (step, w) in &outcome.trajectory.snapshots {
                let name = format!("snapshot-{step:06}.bin");
                write_snapshot(
                    &run_dir.join(&name),
                    &[("w".to_string(), Record::Vector(w.clone()))],
                )?;
                files.push(name);
            }

            let final_loss = outcome.trajectory.records.last().map(|r| r.loss);
            final_losses.push((variant.to_string(), master, final_loss));
            if let Some(failure) = &outcome.trajectory.failure {
                failures.push(format!("{dir_name}: {failure}"));
            }
            manifest.runs.push(RunEntry {
                variant: variant.to_string(),
                master_seed: master,
                rep_index: rep,
                run_seed,
                batch_seed,
                rotation_seed,
                directory: dir_name,
                files,
                final_loss,
                failure: outcome.trajectory.failure.clone(),
            });
        }
    }

    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;

    let summary = RunSummary {
        out_dir: out_dir.to_path_buf(),
        manifest_path,
        completed: manifest.runs.len(),
        failures: failures.clone(),
        final_losses,
    };
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(HarnessError::Numeric(failures.join("; ")))
    }
}

fn run_trajectories(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    let section = cfg.trajectories.as_ref().expect("validated at parse time");
    let sgd_cfg = crate::optimizers::OptimizerConfig {
        alpha: section.sgd_alpha,
        momentum: section.sgd_momentum,
        ..cfg.optimizer.clone()
    };
    let settings = PairedTrajectorySettings {
        angle: section.angle,
        eigenvalues: section.eigenvalues,
        start: section.start,
        steps: cfg.run.steps,
    };
    let (sgd, adam) = paired_trajectories(&sgd_cfg, &cfg.optimizer, &settings)?;

    let mut csv = String::from("step,algorithm,run,w1,w2,loss\n");
    for pair in [&sgd, &adam] {
        for (label, path, losses) in [
            ("plain", &pair.plain, &pair.plain_loss),
            ("rotated", &pair.rotated, &pair.rotated_loss),
        ] {
            for (step, (w, loss)) in path.iter().zip(losses).enumerate() {
                csv.push_str(&csvio::line(&[
                    step.to_string(),
                    pair.algorithm.clone(),
                    label.to_string(),
                    format_f64(w[0]),
                    format_f64(w[1]),
                    format_f64(*loss),
                ]));
            }
        }
    }
    std::fs::write(out_dir.join("paths.csv"), csv)?;

    let mut manifest = RunManifest::new(&cfg.text);
    manifest.runs.push(RunEntry {
        variant: "trajectories".to_string(),
        master_seed: 0,
        rep_index: 0,
        run_seed: 0,
        batch_seed: 0,
        rotation_seed: 0,
        directory: ".".to_string(),
        files: vec!["paths.csv".to_string()],
        final_loss: adam.plain_loss.last().copied(),
        failure: None,
    });
    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;

    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        manifest_path,
        completed: 1,
        failures: Vec::new(),
        final_losses: vec![(
            "trajectories".to_string(),
            0,
            adam.plain_loss.last().copied(),
        )],
    })
}

fn write_checkpoint(path: &Path, outcome: &RunOutcome) -> Result<(), HarnessError> {
    let mut records = vec![
        (
            "rotation".to_string(),
            Record::Rotation(outcome.rotation.clone()),
        ),
        ("w".to_string(), Record::Vector(outcome.w.clone())),
        ("m".to_string(), Record::Vector(outcome.state.m.clone())),
        ("v".to_string(), Record::Vector(outcome.state.v.clone())),
        (
            "momentum_buf".to_string(),
            Record::Vector(outcome.state.momentum_buf.clone()),
        ),
        ("t".to_string(), Record::Scalar(outcome.state.t)),
    ];
    if let Some(update) = &outcome.last_update {
        records.push(("last_update".to_string(), Record::Vector(update.clone())));
    }
    write_snapshot(path, &records)?;
    Ok(())
}

/// Checkpoint contents needed by the diagnostics command.
pub struct Checkpoint {
    pub rotation: CompiledRotation,
    pub w: DenseVector,
    pub state: OptimizerState,
    pub last_update: Option<DenseVector>,
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let records = read_snapshot(path)?;
    let vector = |name: &str| -> Result<DenseVector, HarnessError> {
        match find(&records, name) {
            Some(Record::Vector(v)) => Ok(v.clone()),
            _ => Err(HarnessError::Validation {
                key: format!("checkpoint.{name}"),
                message: "missing vector record".into(),
            }),
        }
    };
    let rotation = match find(&records, "rotation") {
        Some(Record::Rotation(r)) => r.clone(),
        _ => {
            return Err(HarnessError::Validation {
                key: "checkpoint.rotation".into(),
                message: "missing rotation record".into(),
            })
        }
    };
    let t = match find(&records, "t") {
        Some(Record::Scalar(t)) => *t,
        _ => 0,
    };
    let last_update = match find(&records, "last_update") {
        Some(Record::Vector(v)) => Some(v.clone()),
        _ => None,
    };
    Ok(Checkpoint {
        rotation,
        w: vector("w")?,
        state: OptimizerState {
            m: vector("m")?,
            v: vector("v")?,
            momentum_buf: vector("momentum_buf")?,
            t,
        },
        last_update,
    })
}

#[derive(Debug)]
pub struct DiagnoseOutcome {
    pub report_path: PathBuf,
    pub files: Vec<PathBuf>,
}

pub fn cmd_diagnose(
    config_path: &Path,
    checkpoint: &Path,
) -> Result<DiagnoseOutcome, HarnessError> {
    let cfg = load_config(config_path)?;
    let problem = cfg.problem.build()?;
    let check = read_checkpoint(checkpoint)?;
    let dim = problem.dim();
    if check.w.len() != dim {
        return Err(HarnessError::Validation {
            key: "checkpoint.w".into(),
            message: format!("checkpoint dimension {} != problem {dim}", check.w.len()),
        });
    }
    let out_dir = checkpoint
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let d = &cfg.diagnose;
    let numeric = |e: HarnessError| match e {
        HarnessError::Diagnostics(inner) => HarnessError::Numeric(inner.to_string()),
        other => other,
    };

    // gradient bound under the checkpoint's own rotation and under identity
    let checkpoint_tag = check.rotation.scope().to_string();
    let identity = CompiledRotation::identity(dim);
    let bound_rotated = linf_gradient_bound(
        problem.as_ref(),
        &check.w,
        &check.rotation,
        d.trials,
        derive_seed(d.seed, "gradbound", 0),
        &checkpoint_tag,
        &checkpoint_tag,
    )
    .map_err(|e| numeric(e.into()))?;
    let bound_identity = linf_gradient_bound(
        problem.as_ref(),
        &check.w,
        &identity,
        d.trials,
        derive_seed(d.seed, "gradbound", 0),
        "none",
        &checkpoint_tag,
    )
    .map_err(|e| numeric(e.into()))?;

    // averaged Hessian rows at distinct indices
    let mut index_rng = substream(d.seed, "row-indices", 0);
    let rows = d.rows.min(dim);
    let indices = {
        let mut pool: Vec<usize> = (0..dim).collect();
        for slot in 0..rows {
            let j = rand::Rng::random_range(&mut index_rng, slot..dim);
            pool.swap(slot, j);
        }
        pool.truncate(rows);
        pool
    };
    let mut samples: Vec<HessianRowSample> = Vec::with_capacity(rows);
    let mut rows_csv = String::from(
        "index,neuron_count,neuron_mean_abs,neuron_max_abs,layer_count,layer_mean_abs,layer_max_abs,other_count,other_mean_abs,other_max_abs\n",
    );
    let mut contrib_random = [0.0f64; 3];
    let mut contrib_update = [0.0f64; 3];
    let mut dw_rng = substream(d.seed, "contribution-direction", 0);
    let layout = problem.layout().clone();
    for &i in &indices {
        let sample = hessian_row(
            problem.as_ref(),
            &check.w,
            &check.rotation,
            i,
            d.batches_per_row,
            derive_seed(d.seed, "row-batches", i as u64),
            &checkpoint_tag,
            &checkpoint_tag,
        )
        .map_err(|e| numeric(e.into()))?;
        let parts = partition_row(&sample, &layout, i).map_err(|e| numeric(e.into()))?;
        rows_csv.push_str(&csvio::line(&[
            i.to_string(),
            parts.neuron_stats.count.to_string(),
            format_f64(parts.neuron_stats.mean_abs),
            format_f64(parts.neuron_stats.max_abs),
            parts.layer_stats.count.to_string(),
            format_f64(parts.layer_stats.mean_abs),
            format_f64(parts.layer_stats.max_abs),
            parts.other_stats.count.to_string(),
            format_f64(parts.other_stats.mean_abs),
            format_f64(parts.other_stats.max_abs),
        ]));

        let mut random_dir = DenseVector::from_fn(dim, |_| {
            rand::Rng::sample::<f64, _>(&mut dw_rng, rand_distr::StandardNormal)
        });
        random_dir.scale(1.0 / random_dir.norm_l2());
        let (cn, cl, co) = row_contribution(&parts, &random_dir).map_err(|e| numeric(e.into()))?;
        contrib_random[0] += cn / rows as f64;
        contrib_random[1] += cl / rows as f64;
        contrib_random[2] += co / rows as f64;
        if let Some(update) = &check.last_update {
            let (cn, cl, co) = row_contribution(&parts, update).map_err(|e| numeric(e.into()))?;
            contrib_update[0] += cn / rows as f64;
            contrib_update[1] += cl / rows as f64;
            contrib_update[2] += co / rows as f64;
        }
        samples.push(sample);
    }

    let norm = one_one_norm_estimate(&samples, dim).map_err(|e| numeric(e.into()))?;
    let histogram =
        second_moment_histogram(&check.state, d.hist_bins, true).map_err(|e| numeric(e.into()))?;

    let mut hist_csv = String::from("bin_lo,bin_hi,count\n");
    for (slot, &count) in histogram.counts.iter().enumerate() {
        hist_csv.push_str(&csvio::line(&[
            format_f64(histogram.edges[slot]),
            format_f64(histogram.edges[slot + 1]),
            count.to_string(),
        ]));
    }

    let report = json!({
        "checkpoint": checkpoint.display().to_string(),
        "checkpoint_rotation": checkpoint_tag,
        "step": check.state.t,
        "gradient_bounds": [bound_summary(&bound_rotated), bound_summary(&bound_identity)],
        "one_one_norm": {
            "estimate": norm.estimate,
            "std_error": norm.std_error,
            "rows_used": norm.rows_used,
            "dim": norm.dim,
        },
        "second_moment": {
            "iqr_log10": histogram.iqr_log10,
            "zero_count": histogram.zero_count,
            "degenerate": histogram.degenerate,
            "occupied_bins": histogram.occupied_bins(),
        },
        "contributions": {
            "rows": rows,
            "random_direction": {
                "neuron": contrib_random[0],
                "layer": contrib_random[1],
                "other": contrib_random[2],
            },
            "update_direction": check.last_update.as_ref().map(|_| json!({
                "neuron": contrib_update[0],
                "layer": contrib_update[1],
                "other": contrib_update[2],
            })),
        },
        "row_indices": indices,
    });

    let report_path = out_dir.join("diagnostics.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    let rows_path = out_dir.join("hessian_rows.csv");
    std::fs::write(&rows_path, rows_csv)?;
    let hist_path = out_dir.join("v_histogram.csv");
    std::fs::write(&hist_path, hist_csv)?;

    Ok(DiagnoseOutcome {
        report_path: report_path.clone(),
        files: vec![report_path, rows_path, hist_path],
    })
}

fn bound_summary(report: &crate::diagnostics::GradBoundReport) -> serde_json::Value {
    json!({
        "probe_rotation": report.probe_rotation,
        "checkpoint": report.checkpoint,
        "bound": report.bound,
        "trials": report.trials,
        "seed": report.seed,
    })
}

#[derive(Debug)]
pub struct EquivarianceOutcome {
    pub report: serde_json::Value,
    /// Set when the SGD regression gate tripped (exit code 3).
    pub gate_failed: bool,
}

pub fn cmd_equivariance(config_path: &Path) -> Result<EquivarianceOutcome, HarnessError> {
    let cfg = load_config(config_path)?;
    let eq = cfg
        .equivariance
        .clone()
        .unwrap_or(super::config::EquivarianceSection {
            alg: BaseOptimizer::Sgd,
            steps: 100,
            rotation_seed: 0,
            rotation: super::config::EquivarianceRotation::Haar,
        });
    let problem = cfg.problem.build()?;
    let dim = problem.dim();
    let rotation = match eq.rotation {
        super::config::EquivarianceRotation::Identity => crate::linalg::DenseMatrix::identity(dim),
        super::config::EquivarianceRotation::Haar => {
            let mut rng = substream(eq.rotation_seed, "equivariance-rotation", 0);
            haar_orthogonal(dim, &mut rng)?
        }
    };
    let report = check_equivariance(
        eq.alg,
        problem.as_ref(),
        &rotation,
        eq.steps,
        &cfg.optimizer,
        derive_seed(eq.rotation_seed, "equivariance-batches", 0),
    )?;

    let equivariant = report.max_discrepancy < SGD_EQUIVARIANCE_GATE;
    let gate_failed = eq.alg == BaseOptimizer::Sgd && !equivariant;
    let note = match (eq.alg, equivariant) {
        (BaseOptimizer::Sgd, true) => "sgd stayed equivariant",
        (BaseOptimizer::Sgd, false) => "sgd equivariance regression",
        (BaseOptimizer::AdamW, true) => "pass-with-note: adamw behaved equivariantly",
        (BaseOptimizer::AdamW, false) => "expected non-equivariance for adamw",
    };
    let json = json!({
        "alg": match eq.alg { BaseOptimizer::Sgd => "sgd", BaseOptimizer::AdamW => "adamw" },
        "steps": report.steps,
        "max_discrepancy": report.max_discrepancy,
        "threshold": SGD_EQUIVARIANCE_GATE,
        "equivariant": equivariant,
        "expected_non_equivariance": eq.alg == BaseOptimizer::AdamW && !equivariant,
        "note": note,
        "per_step": report.per_step,
    });
    Ok(EquivarianceOutcome {
        report: json,
        gate_failed,
    })
}

#[derive(Debug, Clone)]
pub struct SampleRotationArgs {
    pub dim: usize,
    pub block: usize,
    pub scope: Scope,
    pub seed: u64,
    pub shared: bool,
    /// Optional layer structure, same grammar as the config `layers` key.
    pub layers: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct SampleRotationOutcome {
    pub report: serde_json::Value,
    pub snapshot_path: PathBuf,
}

pub fn cmd_sample_rotation(
    args: &SampleRotationArgs,
) -> Result<SampleRotationOutcome, HarnessError> {
    let layout = match &args.layers {
        Some(raw) => {
            let specs = super::config::parse_layer_list(raw).map_err(|message| {
                HarnessError::Validation {
                    key: "layers".into(),
                    message,
                }
            })?;
            let layout = ParamLayout::new(specs)?;
            if layout.total_dim() != args.dim {
                return Err(HarnessError::Validation {
                    key: "layers".into(),
                    message: format!(
                        "layers cover {} parameters but --dim is {}",
                        layout.total_dim(),
                        args.dim
                    ),
                });
            }
            layout
        }
        None => ParamLayout::single_vector(args.dim),
    };
    let spec = RotationSpec {
        scope: args.scope,
        block_dim: args.block,
        seed: args.seed,
        shared_blocks: args.shared,
        ..Default::default()
    };
    let mut rng = substream(args.seed, "rotation-compile", 0);
    let rotation = compile(&spec, &layout, &mut rng)?;

    let partitions: Vec<serde_json::Value> = rotation
        .partitions()
        .iter()
        .map(|p| {
            json!({
                "size": p.len(),
                "block_dim": p.blocks.block_dim(),
                "blocks": p.blocks.count(),
                "shared": p.blocks.is_shared(),
                "residual": p.residual_dim(),
            })
        })
        .collect();

    // orthogonality check: dense oracle at desk scale, norm spot checks above
    let (method, residual) = if args.dim <= 64 {
        let dense = rotation.to_dense()?;
        ("dense", dense.orthogonality_residual())
    } else {
        let mut worst = 0.0f64;
        let mut vec_rng = substream(args.seed, "rotation-verify", 0);
        for _ in 0..100 {
            let g = DenseVector::from_fn(args.dim, |_| {
                rand::Rng::sample::<f64, _>(&mut vec_rng, rand_distr::StandardNormal)
            });
            let rotated = rotation.apply(&g)?;
            let back = rotation.apply_inverse(&rotated)?;
            worst = worst
                .max((rotated.norm_l2() - g.norm_l2()).abs() / g.norm_l2().max(1.0))
                .max(back.max_abs_diff(&g));
        }
        ("spot", worst)
    };
    if residual > 1e-10 {
        return Err(HarnessError::Numeric(format!(
            "sampled rotation failed the orthogonality check: residual {residual:e}"
        )));
    }

    let snapshot_path = args.out.clone().unwrap_or_else(|| {
        resolve_out_dir(Path::new(&format!(
            "rotation-{}-d{}-n{}-seed{}.bin",
            args.scope, args.dim, args.block, args.seed
        )))
    });
    if let Some(parent) = snapshot_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_snapshot(
        &snapshot_path,
        &[("rotation".to_string(), Record::Rotation(rotation))],
    )?;

    let report = json!({
        "dim": args.dim,
        "block_dim": args.block,
        "scope": args.scope.to_string(),
        "seed": args.seed,
        "shared_blocks": args.shared,
        "partitions": partitions,
        "orthogonality": { "method": method, "residual": residual },
        "snapshot": snapshot_path.display().to_string(),
    });
    Ok(SampleRotationOutcome {
        report,
        snapshot_path,
    })
}
