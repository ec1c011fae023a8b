//! Householder QR and the Haar-orthogonal sampler built on it.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DenseMatrix, LinalgError};
use crate::rng::RngStream;

/// Householder QR of a tall matrix `M` (rows >= cols).
///
/// Returns `(Q, R)` with `Q` square `rows x rows`, `R` upper triangular with
/// nonnegative diagonal (signs normalized), and `Q R = M`.
pub fn householder_qr(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix), LinalgError> {
    let rows = m.rows();
    let cols = m.cols();
    if rows < cols {
        return Err(LinalgError::NotTall {
            op: "householder_qr",
            rows,
            cols,
        });
    }

    let mut r = m.clone();
    let mut q = DenseMatrix::identity(rows);

    for k in 0..cols.min(rows.saturating_sub(1)) {
        // Reflector zeroing r[k+1.., k].
        let mut norm_sq = 0.0;
        for i in k..rows {
            norm_sq += r[(i, k)] * r[(i, k)];
        }
        if norm_sq == 0.0 {
            continue;
        }
        let norm = norm_sq.sqrt();
        let head = r[(k, k)];
        let alpha = if head >= 0.0 { -norm } else { norm };

        let mut v = vec![0.0; rows - k];
        v[0] = head - alpha;
        for i in (k + 1)..rows {
            v[i - k] = r[(i, k)];
        }
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        if v_norm_sq == 0.0 {
            continue;
        }
        let tau = 2.0 / v_norm_sq;

        // r <- H r
        for j in k..cols {
            let mut dot = 0.0;
            for i in k..rows {
                dot += v[i - k] * r[(i, j)];
            }
            let dot = dot * tau;
            for i in k..rows {
                r[(i, j)] -= dot * v[i - k];
            }
        }
        // q <- q H  (accumulates Q = H_0 H_1 ... from the right)
        for i in 0..rows {
            let mut dot = 0.0;
            for j in k..rows {
                dot += q[(i, j)] * v[j - k];
            }
            let dot = dot * tau;
            for j in k..rows {
                q[(i, j)] -= dot * v[j - k];
            }
        }
    }

    // Clean the strictly lower triangle, then normalize signs so that the
    // diagonal of R is nonnegative. Without this normalization the QR map is
    // not unique and the Haar sampler below would be sign biased.
    for j in 0..cols {
        for i in (j + 1)..rows {
            r[(i, j)] = 0.0;
        }
    }
    for k in 0..cols {
        if r[(k, k)] < 0.0 {
            for j in k..cols {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..rows {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }

    Ok((q, r))
}

/// Samples a Haar-distributed orthogonal matrix from `O(n)`.
///
/// Standard-normal matrix followed by QR with the positive-diagonal
/// normalization of [`householder_qr`]. No projection to `SO(n)` is applied;
/// reflections are kept.
pub fn haar_orthogonal(n: usize, rng: &mut RngStream) -> Result<DenseMatrix, LinalgError> {
    if n == 0 {
        return Err(LinalgError::InvalidDimension {
            op: "haar_orthogonal",
            dim: 0,
        });
    }
    let gaussian = DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let (q, _) = householder_qr(&gaussian)?;
    if let Some(index) = q.first_nonfinite() {
        return Err(LinalgError::NonFinite { index });
    }
    Ok(q)
}
