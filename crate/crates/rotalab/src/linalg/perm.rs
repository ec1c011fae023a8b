//! Index permutations with exact (integer) apply and inverse-apply.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseVector, LinalgError};
use crate::rng::RngStream;

/// A bijection on `{0, …, d-1}`.
///
/// `apply` gathers (`out[i] = v[forward[i]]`), `apply_inverse` scatters
/// (`out[forward[i]] = v[i]`), so the round trip is exact — no arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
}

impl Permutation {
    pub fn identity(d: usize) -> Self {
        Self {
            forward: (0..d).collect(),
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self, LinalgError> {
        let d = forward.len();
        let mut seen = vec![false; d];
        for (position, &value) in forward.iter().enumerate() {
            if value >= d || seen[value] {
                return Err(LinalgError::NotBijective { value, position });
            }
            seen[value] = true;
        }
        Ok(Self { forward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.forward.len()];
        for (i, &j) in self.forward.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { forward: inv }
    }

    pub fn apply(&self, v: &DenseVector) -> DenseVector {
        assert_eq!(v.len(), self.forward.len(), "permutation length mismatch");
        DenseVector::from_fn(v.len(), |i| v[self.forward[i]])
    }

    pub fn apply_inverse(&self, v: &DenseVector) -> DenseVector {
        assert_eq!(v.len(), self.forward.len(), "permutation length mismatch");
        let mut out = DenseVector::zeros(v.len());
        for (i, &j) in self.forward.iter().enumerate() {
            out[j] = v[i];
        }
        out
    }

    pub fn apply_slice(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.forward.len(), "permutation length mismatch");
        self.forward.iter().map(|&j| v[j]).collect()
    }

    pub fn apply_inverse_slice(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.forward.len(), "permutation length mismatch");
        let mut out = vec![0.0; v.len()];
        for (i, &j) in self.forward.iter().enumerate() {
            out[j] = v[i];
        }
        out
    }
}

/// Uniform random permutation of `{0, …, d-1}` by Fisher–Yates.
pub fn random_permutation(d: usize, rng: &mut RngStream) -> Permutation {
    let mut forward: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = rng.random_range(0..=i);
        forward.swap(i, j);
    }
    Permutation { forward }
}
