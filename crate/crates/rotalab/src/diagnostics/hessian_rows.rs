//! Averaged rotated Hessian rows, their neuron/layer/other split, and the
//! (1,1)-norm estimate built from sampled rows.

use serde::Serialize;

use super::DiagnosticsError;
use crate::linalg::DenseVector;
use crate::rotations::{partition_indices, CompiledRotation, ParamLayout, Scope};
use crate::testbeds::Problem;

/// One averaged row of the rotated stochastic Hessian:
/// `r_i = (1/k) sum_j R hvp(w, R^T e_i, B_j)`.
#[derive(Debug, Clone, Serialize)]
pub struct HessianRowSample {
    pub index: usize,
    pub row: DenseVector,
    /// Number of minibatches averaged.
    pub batches: usize,
    pub probe_rotation: String,
    pub checkpoint_rotation: String,
}

#[allow(clippy::too_many_arguments)]
pub fn hessian_row(
    problem: &dyn Problem,
    w: &DenseVector,
    rot: &CompiledRotation,
    index: usize,
    batches: usize,
    seed: u64,
    probe_rotation: &str,
    checkpoint_rotation: &str,
) -> Result<HessianRowSample, DiagnosticsError> {
    let dim = problem.dim();
    if index >= dim {
        return Err(DiagnosticsError::IndexOutOfRange { index, dim });
    }
    if batches == 0 {
        return Err(DiagnosticsError::EmptyInput("hessian_row"));
    }
    let mut probe = DenseVector::zeros(dim);
    probe[index] = 1.0;
    let direction = rot.apply_inverse(&probe)?;

    let mut stream = problem.batch_stream(seed);
    let mut row = DenseVector::zeros(dim);
    for _ in 0..batches {
        let batch = stream.next_batch();
        let hv = problem.hvp(w, &direction, &batch);
        row.axpy(1.0, &rot.apply(&hv)?);
    }
    row.scale(1.0 / batches as f64);
    Ok(HessianRowSample {
        index,
        row,
        batches,
        probe_rotation: probe_rotation.to_string(),
        checkpoint_rotation: checkpoint_rotation.to_string(),
    })
}

/// Summary statistics of one part of a split row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PartStats {
    pub count: usize,
    pub mean_abs: f64,
    pub max_abs: f64,
}

fn stats_over(row: &DenseVector, indices: &[usize]) -> PartStats {
    let mut mean = 0.0;
    let mut max = 0.0f64;
    for &i in indices {
        mean += row[i].abs();
        max = max.max(row[i].abs());
    }
    PartStats {
        count: indices.len(),
        mean_abs: if indices.is_empty() {
            0.0
        } else {
            mean / indices.len() as f64
        },
        max_abs: max,
    }
}

/// Exact three-way split of a row: same output neuron as `w_i`, rest of the
/// same layer, everything else. The parts are zero outside their index sets
/// and sum back to the row exactly.
#[derive(Debug, Clone, Serialize)]
pub struct RowPartition {
    pub neuron: DenseVector,
    pub layer: DenseVector,
    pub other: DenseVector,
    pub neuron_stats: PartStats,
    pub layer_stats: PartStats,
    pub other_stats: PartStats,
}

pub fn partition_row(
    sample: &HessianRowSample,
    layout: &ParamLayout,
    index: usize,
) -> Result<RowPartition, DiagnosticsError> {
    let dim = layout.total_dim();
    if index >= dim || sample.row.len() != dim {
        return Err(DiagnosticsError::IndexOutOfRange { index, dim });
    }

    let neuron_sets = partition_indices(layout, Scope::Output, None)?;
    let neuron_set = neuron_sets
        .into_iter()
        .find(|set| set.contains(&index))
        .expect("output partitions tile the layout");
    let layer_idx = layout.layer_of(index).expect("layout covers every index");
    let layer_range = layout.layers()[layer_idx].flat_range();

    let mut in_neuron = vec![false; dim];
    for &i in &neuron_set {
        in_neuron[i] = true;
    }
    let mut neuron = DenseVector::zeros(dim);
    let mut layer = DenseVector::zeros(dim);
    let mut other = DenseVector::zeros(dim);
    let mut layer_set = Vec::new();
    let mut other_set = Vec::new();
    for i in 0..dim {
        if in_neuron[i] {
            neuron[i] = sample.row[i];
        } else if layer_range.contains(&i) {
            layer[i] = sample.row[i];
            layer_set.push(i);
        } else {
            other[i] = sample.row[i];
            other_set.push(i);
        }
    }
    Ok(RowPartition {
        neuron_stats: stats_over(&sample.row, &neuron_set),
        layer_stats: stats_over(&sample.row, &layer_set),
        other_stats: stats_over(&sample.row, &other_set),
        neuron,
        layer,
        other,
    })
}

/// The three contributions `(r_i[I] . dw)` of a split row to the directional
/// gradient change; they sum to the full inner product exactly up to float
/// addition.
pub fn row_contribution(
    parts: &RowPartition,
    dw: &DenseVector,
) -> Result<(f64, f64, f64), DiagnosticsError> {
    if dw.len() != parts.neuron.len() {
        return Err(DiagnosticsError::LengthMismatch {
            expected: parts.neuron.len(),
            got: dw.len(),
        });
    }
    Ok((
        parts.neuron.dot(dw),
        parts.layer.dot(dw),
        parts.other.dot(dw),
    ))
}

/// `|H|_(1,1)` estimated as `d x mean_i |r_i|_1` over the sampled rows, with
/// the standard error of that mean.
#[derive(Debug, Clone, Serialize)]
pub struct NormEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub rows_used: usize,
    pub dim: usize,
}

pub fn one_one_norm_estimate(
    samples: &[HessianRowSample],
    dim: usize,
) -> Result<NormEstimate, DiagnosticsError> {
    if samples.is_empty() {
        return Err(DiagnosticsError::EmptyInput("one_one_norm_estimate"));
    }
    let norms: Vec<f64> = samples.iter().map(|s| s.row.norm_l1()).collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let std_error = if norms.len() > 1 {
        let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(NormEstimate {
        estimate: dim as f64 * mean,
        std_error: dim as f64 * std_error,
        rows_used: samples.len(),
        dim,
    })
}
