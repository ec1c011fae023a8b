//! Histograms of AdamW's second-moment entries, with a dispersion summary.

use serde::Serialize;

use super::DiagnosticsError;
use crate::optimizers::OptimizerState;

/// Binned view of the second-moment vector. In log mode the bins cover
/// `log10(v)` over the positive entries and zeros are counted separately.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges; in log mode these are log10 values.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub log_scale: bool,
    pub zero_count: u64,
    /// Interquartile range of `log10 v` over positive entries; `None` when
    /// nothing is positive.
    pub iqr_log10: Option<f64>,
    /// Set when every entry is zero: the histogram degenerates to the zero
    /// bucket.
    pub degenerate: bool,
}

impl Histogram {
    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Interquartile range of `log10` over the positive entries of `values`.
pub(crate) fn iqr_log10(values: &[f64]) -> Option<f64> {
    let mut logs: Vec<f64> = values
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x.log10())
        .collect();
    if logs.is_empty() {
        return None;
    }
    logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(quantile(&logs, 0.75) - quantile(&logs, 0.25))
}

/// Bins the second-moment entries of `state` (log10 bins by default).
pub fn second_moment_histogram(
    state: &OptimizerState,
    bins: usize,
    log_scale: bool,
) -> Result<Histogram, DiagnosticsError> {
    if state.v.is_empty() {
        return Err(DiagnosticsError::EmptyInput("second_moment_histogram"));
    }
    if bins == 0 {
        return Err(DiagnosticsError::EmptyInput("histogram bins"));
    }
    let values: Vec<f64> = state.v.iter().copied().collect();
    let zero_count = values.iter().filter(|&&x| x == 0.0).count() as u64;

    let transformed: Vec<f64> = if log_scale {
        values
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|x| x.log10())
            .collect()
    } else {
        values.clone()
    };

    if transformed.is_empty() {
        // all-zero second moments: a single degenerate bucket, flagged
        return Ok(Histogram {
            edges: vec![0.0, 0.0],
            counts: vec![zero_count],
            log_scale,
            zero_count,
            iqr_log10: None,
            degenerate: true,
        });
    }

    let lo = transformed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = transformed
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let (edges, counts) = if lo == hi {
        (vec![lo, hi], vec![transformed.len() as u64])
    } else {
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
        let mut counts = vec![0u64; bins];
        for &x in &transformed {
            let slot = (((x - lo) / width) as usize).min(bins - 1);
            counts[slot] += 1;
        }
        (edges, counts)
    };

    Ok(Histogram {
        edges,
        counts,
        log_scale,
        zero_count,
        iqr_log10: iqr_log10(&values),
        degenerate: false,
    })
}
