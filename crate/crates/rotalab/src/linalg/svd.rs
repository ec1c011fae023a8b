//! Full SVD by one-sided Jacobi iteration.

use super::{DenseMatrix, DenseVector, LinalgError};

const MAX_SWEEPS: usize = 60;
const PAIR_TOL: f64 = 1e-15;

/// Full singular value decomposition `M = U diag(S) V^T`.
///
/// `U` is `rows x rows`, `V` is `cols x cols`, both orthogonal; `S` has
/// `min(rows, cols)` nonnegative entries in nonincreasing order. Columns of
/// `U` are sign-normalized (first entry of magnitude above 1e-12 is
/// nonnegative) with matching flips in `V`, so repeated runs are bit
/// identical.
pub fn svd_full(m: &DenseMatrix) -> Result<(DenseMatrix, DenseVector, DenseMatrix), LinalgError> {
    if let Some(index) = m.first_nonfinite() {
        return Err(LinalgError::NonFinite { index });
    }
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let (u, s, v) = svd_tall(&m.transpose())?;
        Ok((v, s, u))
    }
}

/// One-sided Jacobi on a tall matrix (rows >= cols): repeatedly rotates
/// column pairs of a working copy until all pairs are orthogonal, which
/// makes the working copy `U_r diag(S)` and the accumulated rotations `V`.
fn svd_tall(m: &DenseMatrix) -> Result<(DenseMatrix, DenseVector, DenseMatrix), LinalgError> {
    let rows = m.rows();
    let cols = m.cols();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(cols);

    let mut converged = false;
    let mut worst = 0.0f64;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    app += a[(i, p)] * a[(i, p)];
                    aqq += a[(i, q)] * a[(i, q)];
                    apq += a[(i, p)] * a[(i, q)];
                }
                if app == 0.0 || aqq == 0.0 {
                    continue;
                }
                let scale = (app * aqq).sqrt();
                worst = worst.max(apq.abs() / scale);
                if apq.abs() <= PAIR_TOL * scale {
                    continue;
                }
                rotated = true;

                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                for i in 0..rows {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
                for i in 0..cols {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdNotConverged {
            sweeps: MAX_SWEEPS,
            residual: worst,
        });
    }

    // Column norms are the singular values; sort them nonincreasing.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut s = DenseVector::zeros(cols);
    let mut u = DenseMatrix::zeros(rows, rows);
    let mut v_sorted = DenseMatrix::zeros(cols, cols);
    let rank_tol = norms[order[0]].max(f64::MIN_POSITIVE) * 1e-14 * rows.max(cols) as f64;
    let mut rank = 0;
    for (slot, &j) in order.iter().enumerate() {
        s[slot] = norms[j];
        for i in 0..cols {
            v_sorted[(i, slot)] = v[(i, j)];
        }
        if norms[j] > rank_tol {
            for i in 0..rows {
                u[(i, slot)] = a[(i, j)] / norms[j];
            }
            rank = slot + 1;
        }
    }

    complete_basis(&mut u, rank);
    normalize_signs(&mut u, &s, &mut v_sorted, rank);

    Ok((u, s, v_sorted))
}

/// Fills columns `rank..` of `u` with an orthonormal completion, by double
/// Gram-Schmidt of canonical basis vectors against the columns so far.
fn complete_basis(u: &mut DenseMatrix, rank: usize) {
    let n = u.rows();
    let mut filled = rank;
    let mut candidate = 0;
    while filled < n && candidate < n {
        let mut col = vec![0.0; n];
        col[candidate] = 1.0;
        for _pass in 0..2 {
            for k in 0..filled {
                let mut dot = 0.0;
                for i in 0..n {
                    dot += u[(i, k)] * col[i];
                }
                for i in 0..n {
                    col[i] -= dot * u[(i, k)];
                }
            }
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for i in 0..n {
                u[(i, filled)] = col[i] / norm;
            }
            filled += 1;
        }
        candidate += 1;
    }
    debug_assert_eq!(filled, n, "orthonormal completion came up short");
}

/// Sign convention: flip each U column whose leading significant entry is
/// negative; mirror the flip in V while the pair carries a nonzero singular
/// value so the reconstruction is untouched.
fn normalize_signs(u: &mut DenseMatrix, s: &DenseVector, v: &mut DenseMatrix, rank: usize) {
    let rows = u.rows();
    let cols = v.rows();
    for j in 0..rows {
        let lead = (0..rows).find(|&i| u[(i, j)].abs() > 1e-12);
        if let Some(i) = lead {
            if u[(i, j)] < 0.0 {
                for r in 0..rows {
                    u[(r, j)] = -u[(r, j)];
                }
                if j < rank && j < s.len() {
                    for r in 0..cols {
                        v[(r, j)] = -v[(r, j)];
                    }
                }
            }
        }
    }
    // Columns of V not tied to a nonzero singular value get their own
    // normalization for determinism.
    for j in rank..cols {
        let lead = (0..cols).find(|&i| v[(i, j)].abs() > 1e-12);
        if let Some(i) = lead {
            if v[(i, j)] < 0.0 {
                for r in 0..cols {
                    v[(r, j)] = -v[(r, j)];
                }
            }
        }
    }
}

/// Reconstruction `U diag(S) V^T`, for tests and residual reporting.
#[cfg(test)]
pub(crate) fn reconstruct(u: &DenseMatrix, s: &DenseVector, v: &DenseMatrix) -> DenseMatrix {
    let rows = u.rows();
    let cols = v.rows();
    DenseMatrix::from_fn(rows, cols, |i, j| {
        (0..s.len()).map(|k| u[(i, k)] * s[k] * v[(j, k)]).sum()
    })
}
