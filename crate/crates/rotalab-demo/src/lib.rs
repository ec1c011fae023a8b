//! Browser demo bindings. Each export runs a desk-scale experiment and
//! returns a JSON string; the page in `www/` renders the results on canvas.
//! Everything is seeded, so moving a slider back reproduces the exact
//! previous picture.

use serde_json::json;
use wasm_bindgen::prelude::*;

use rotalab::diagnostics::second_moment_histogram;
use rotalab::optimizers::{run_training, BaseOptimizer, OptimizerConfig, RunSettings};
use rotalab::rng::{derive_seed, substream};
use rotalab::rotations::{compile, LayerSpec, ParamLayout, RotationSpec, Scope};
use rotalab::testbeds::{
    make_quadratic, paired_trajectories, Basis, PairedTrajectorySettings, QuadraticSpec, Spectrum,
};

fn error_json(message: impl std::fmt::Display) -> String {
    json!({ "error": message.to_string() }).to_string()
}

/// Paired SGD-momentum / AdamW trajectories on `diag(1, cond)`, unrotated
/// and rotated by `angle_deg`.
pub fn trajectories_json(
    angle_deg: f64,
    cond: f64,
    steps: u32,
    adam_alpha: f64,
    sgd_alpha: f64,
    sgd_momentum: f64,
) -> String {
    if !(1.0..=1e6).contains(&cond) {
        return error_json("condition number must lie in [1, 1e6]");
    }
    if steps == 0 || steps > 5000 {
        return error_json("steps must lie in [1, 5000]");
    }
    let sgd_cfg = OptimizerConfig {
        alpha: sgd_alpha,
        momentum: sgd_momentum,
        ..Default::default()
    };
    let adam_cfg = OptimizerConfig {
        alpha: adam_alpha,
        ..Default::default()
    };
    let settings = PairedTrajectorySettings {
        angle: angle_deg.to_radians(),
        eigenvalues: [1.0, cond],
        start: [1.0, 1.0],
        steps: steps as u64,
    };
    match paired_trajectories(&sgd_cfg, &adam_cfg, &settings) {
        Ok((sgd, adam)) => json!({
            "angle_deg": angle_deg,
            "cond": cond,
            "sgd": sgd,
            "adam": adam,
        })
        .to_string(),
        Err(err) => error_json(err),
    }
}

/// AdamW loss curves on the d = 64 anisotropic quadratic under the four
/// random scopes, plus the spread of the final second moments.
pub fn scope_sweep_json(seed: u32, steps: u32, alpha: f64) -> String {
    if steps == 0 || steps > 10_000 {
        return error_json("steps must lie in [1, 10000]");
    }
    let problem = match make_quadratic(&QuadraticSpec {
        dim: 64,
        spectrum: Spectrum::LogUniformSorted {
            min: 1e-2,
            max: 1e2,
            seed: 7,
        },
        basis: Basis::AxisAligned,
        minimizer: None,
        noise: 0.01,
        layers: Some(vec![
            LayerSpec::matrix("a", 2, 16),
            LayerSpec::matrix("b", 2, 16),
        ]),
        init_seed: 1,
        init_scale: 1.0,
    }) {
        Ok(p) => p,
        Err(err) => return error_json(err),
    };
    let cfg = OptimizerConfig {
        alpha,
        ..Default::default()
    };
    let stride = (steps / 200).max(1);

    let mut scopes = Vec::new();
    for scope in [Scope::None, Scope::Output, Scope::Layer, Scope::Global] {
        let spec = RotationSpec {
            scope,
            block_dim: 16,
            seed: derive_seed(seed as u64, &format!("rot-{scope}"), 0),
            ..Default::default()
        };
        let settings = RunSettings {
            steps: steps as u64,
            batch_seed: derive_seed(seed as u64, "batches", 0),
            base: BaseOptimizer::AdamW,
            ..Default::default()
        };
        let outcome = match run_training(&problem, &cfg, &spec, &settings) {
            Ok(out) => out,
            Err(err) => return error_json(err),
        };
        let curve: Vec<(u64, f64)> = outcome
            .trajectory
            .records
            .iter()
            .filter(|r| r.step % stride as u64 == 0 || r.step == steps as u64)
            .map(|r| (r.step, r.loss))
            .collect();
        let iqr = second_moment_histogram(&outcome.state, 24, true)
            .ok()
            .and_then(|h| h.iqr_log10);
        scopes.push(json!({
            "scope": scope.to_string(),
            "curve": curve,
            "final_loss": outcome.trajectory.records.last().map(|r| r.loss),
            "iqr_log10_v": iqr,
        }));
    }
    json!({ "seed": seed, "alpha": alpha, "steps": steps, "scopes": scopes }).to_string()
}

/// Dense view of a compiled rotation for the structure heatmap (d <= 64).
pub fn rotation_heatmap_json(dim: u32, block: u32, scope: &str, seed: u32) -> String {
    let dim = dim as usize;
    if dim == 0 || dim > 64 {
        return error_json("dim must lie in [1, 64] for the dense heatmap");
    }
    if block == 0 {
        return error_json("block must be at least 1");
    }
    let scope: Scope = match scope.parse() {
        Ok(s) => s,
        Err(err) => return error_json(err),
    };
    if scope == Scope::Svd {
        return error_json("the heatmap shows random scopes; svd factors change every refresh");
    }
    // two matrix layers when the size allows, so layer/output/input scopes
    // show distinct structure; otherwise one flat layer
    let layout = if scope == Scope::Global || !dim.is_multiple_of(8) {
        ParamLayout::single_vector(dim)
    } else {
        ParamLayout::new(vec![
            LayerSpec::matrix("a", dim / 8, 4),
            LayerSpec::matrix("b", dim / 8, 4),
        ])
        .unwrap()
    };
    let spec = RotationSpec {
        scope,
        block_dim: block as usize,
        seed: seed as u64,
        ..Default::default()
    };
    let mut rng = substream(seed as u64, "rotation-compile", 0);
    let rotation = match compile(&spec, &layout, &mut rng) {
        Ok(r) => r,
        Err(err) => return error_json(err),
    };
    let dense = match rotation.to_dense() {
        Ok(d) => d,
        Err(err) => return error_json(err),
    };
    let partitions: Vec<serde_json::Value> = rotation
        .partitions()
        .iter()
        .map(|p| {
            json!({
                "size": p.len(),
                "block_dim": p.blocks.block_dim(),
                "blocks": p.blocks.count(),
                "residual": p.residual_dim(),
            })
        })
        .collect();
    json!({
        "dim": dim,
        "scope": scope.to_string(),
        "matrix": dense.data(),
        "orthogonality_residual": dense.orthogonality_residual(),
        "partitions": partitions,
    })
    .to_string()
}

#[wasm_bindgen]
pub fn trajectories(
    angle_deg: f64,
    cond: f64,
    steps: u32,
    adam_alpha: f64,
    sgd_alpha: f64,
    sgd_momentum: f64,
) -> String {
    trajectories_json(angle_deg, cond, steps, adam_alpha, sgd_alpha, sgd_momentum)
}

#[wasm_bindgen]
pub fn scope_sweep(seed: u32, steps: u32, alpha: f64) -> String {
    scope_sweep_json(seed, steps, alpha)
}

#[wasm_bindgen]
pub fn rotation_heatmap(dim: u32, block: u32, scope: &str, seed: u32) -> String {
    rotation_heatmap_json(dim, block, scope, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectories_payload_shape() {
        let raw = trajectories_json(45.0, 100.0, 50, 0.05, 0.01, 0.9);
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert!(v.get("error").is_none(), "{raw}");
        assert_eq!(v["sgd"]["plain"].as_array().unwrap().len(), 51);
        assert_eq!(v["adam"]["rotated"].as_array().unwrap().len(), 51);
        // deterministic across calls
        assert_eq!(raw, trajectories_json(45.0, 100.0, 50, 0.05, 0.01, 0.9));
    }

    #[test]
    fn scope_sweep_orders_scopes() {
        let raw = scope_sweep_json(0, 400, 4e-3);
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        let scopes = v["scopes"].as_array().unwrap();
        assert_eq!(scopes.len(), 4);
        for entry in scopes {
            assert!(entry["final_loss"].as_f64().unwrap().is_finite());
            assert!(entry["iqr_log10_v"].as_f64().unwrap() >= 0.0);
            assert!(!entry["curve"].as_array().unwrap().is_empty());
        }
    }

    #[test]
    fn heatmap_is_orthogonal_and_bounded() {
        let raw = rotation_heatmap_json(16, 4, "global", 3);
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert!(v["orthogonality_residual"].as_f64().unwrap() < 1e-12);
        assert_eq!(v["matrix"].as_array().unwrap().len(), 256);

        let too_big: serde_json::Value =
            serde_json::from_str(&rotation_heatmap_json(100, 4, "global", 3)).unwrap();
        assert!(too_big.get("error").is_some());
    }
}
