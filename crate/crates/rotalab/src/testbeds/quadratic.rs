//! Quadratic testbeds: `f(w) = 1/2 (w - w*)^T A (w - w*)` with a
//! configurable spectrum, basis, and gradient noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Batch, Problem, TestbedError};
use crate::linalg::{haar_orthogonal, DenseMatrix, DenseVector};
use crate::rng::{stream_from_seed, substream};
use crate::rotations::{LayerSpec, ParamLayout};

/// Eigenvalues of the Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Spectrum {
    Explicit(Vec<f64>),
    /// `dim` values drawn log-uniformly from `[min, max]`, assigned to
    /// coordinates in draw order.
    LogUniform {
        min: f64,
        max: f64,
        seed: u64,
    },
    /// Same draw, assigned in ascending order. Consecutive coordinates then
    /// share similar curvature, so a row is more homogeneous than its layer
    /// and a layer more homogeneous than the whole space — the structure
    /// that makes broader rotation scopes hurt more.
    LogUniformSorted {
        min: f64,
        max: f64,
        seed: u64,
    },
}

/// Orientation of the Hessian eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    AxisAligned,
    /// Eigenvectors from a Haar-orthogonal sample.
    RotatedBy {
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub spectrum: Spectrum,
    pub basis: Basis,
    /// Minimizer `w*`; zeros when omitted.
    pub minimizer: Option<Vec<f64>>,
    /// Gradient noise scale sigma (additive Gaussian, zero mean).
    pub noise: f64,
    /// Layer structure for rotation scopes; one vector layer when omitted.
    pub layers: Option<Vec<LayerSpec>>,
    /// Starting point: `w* + init_scale * N(0, I)` drawn from `init_seed`.
    pub init_seed: u64,
    pub init_scale: f64,
}

impl QuadraticSpec {
    pub fn axis_aligned(eigenvalues: Vec<f64>) -> Self {
        Self {
            dim: eigenvalues.len(),
            spectrum: Spectrum::Explicit(eigenvalues),
            basis: Basis::AxisAligned,
            minimizer: None,
            noise: 0.0,
            layers: None,
            init_seed: 0,
            init_scale: 1.0,
        }
    }
}

/// Materialized quadratic problem.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    layout: ParamLayout,
    eigenvalues: Vec<f64>,
    /// Dense Hessian; `None` for the axis-aligned case, where `A = diag`.
    hessian: Option<DenseMatrix>,
    minimizer: DenseVector,
    noise: f64,
    init: DenseVector,
}

pub fn make_quadratic(spec: &QuadraticSpec) -> Result<QuadraticProblem, TestbedError> {
    if spec.dim == 0 {
        return Err(TestbedError::InvalidSpec("dim must be positive".into()));
    }
    let eigenvalues = match &spec.spectrum {
        Spectrum::Explicit(values) => {
            if values.len() != spec.dim {
                return Err(TestbedError::InvalidSpec(format!(
                    "{} eigenvalues for dim {}",
                    values.len(),
                    spec.dim
                )));
            }
            values.clone()
        }
        Spectrum::LogUniform { min, max, seed } | Spectrum::LogUniformSorted { min, max, seed } => {
            if *min <= 0.0 || *max < *min {
                return Err(TestbedError::InvalidSpec(
                    "log-uniform range needs 0 < min <= max".into(),
                ));
            }
            let mut rng = substream(*seed, "quadratic-spectrum", 0);
            let (lo, hi) = (min.ln(), max.ln());
            let mut values: Vec<f64> = (0..spec.dim)
                .map(|_| (lo + (hi - lo) * rng.random::<f64>()).exp())
                .collect();
            if matches!(spec.spectrum, Spectrum::LogUniformSorted { .. }) {
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
            values
        }
    };
    if let Some(bad) = eigenvalues.iter().find(|&&l| l <= 0.0 || !l.is_finite()) {
        return Err(TestbedError::InvalidSpec(format!(
            "eigenvalues must be positive and finite, got {bad}"
        )));
    }

    let hessian = match spec.basis {
        Basis::AxisAligned => None,
        Basis::RotatedBy { seed } => {
            let mut rng = substream(seed, "quadratic-basis", 0);
            let q = haar_orthogonal(spec.dim, &mut rng)?;
            // A = Q diag(lambda) Q^T, mirrored so symmetry is bit exact
            let mut a = DenseMatrix::zeros(spec.dim, spec.dim);
            for i in 0..spec.dim {
                for j in i..spec.dim {
                    let mut acc = 0.0;
                    for k in 0..spec.dim {
                        acc += q[(i, k)] * eigenvalues[k] * q[(j, k)];
                    }
                    a[(i, j)] = acc;
                    a[(j, i)] = acc;
                }
            }
            Some(a)
        }
    };

    let minimizer = match &spec.minimizer {
        Some(values) => {
            if values.len() != spec.dim {
                return Err(TestbedError::InvalidSpec(
                    "minimizer length does not match dim".into(),
                ));
            }
            DenseVector::new(values.clone())
        }
        None => DenseVector::zeros(spec.dim),
    };

    let layout = match &spec.layers {
        Some(layer_specs) => {
            let layout = ParamLayout::new(layer_specs.clone())?;
            if layout.total_dim() != spec.dim {
                return Err(TestbedError::InvalidSpec(format!(
                    "layers cover {} parameters, dim is {}",
                    layout.total_dim(),
                    spec.dim
                )));
            }
            layout
        }
        None => ParamLayout::single_vector(spec.dim),
    };

    let mut init_rng = substream(spec.init_seed, "quadratic-init", 0);
    let mut init = minimizer.clone();
    for i in 0..spec.dim {
        init[i] += spec.init_scale * init_rng.sample::<f64, _>(StandardNormal);
    }

    Ok(QuadraticProblem {
        layout,
        eigenvalues,
        hessian,
        minimizer,
        noise: spec.noise,
        init,
    })
}

impl QuadraticProblem {
    /// Builds a quadratic directly from a symmetric Hessian, for constructed
    /// coupling-structure experiments. The layout defaults to one vector
    /// layer; the starting point to `w* + N(0, I)` from seed 0.
    pub fn from_dense_hessian(
        a: DenseMatrix,
        layout: Option<ParamLayout>,
        noise: f64,
    ) -> Result<Self, TestbedError> {
        let d = a.rows();
        if d == 0 || a.cols() != d {
            return Err(TestbedError::InvalidSpec(
                "hessian must be square and nonempty".into(),
            ));
        }
        if a.max_abs_diff(&a.transpose()) > 1e-12 * a.max_abs().max(1.0) {
            return Err(TestbedError::InvalidSpec(
                "hessian must be symmetric".into(),
            ));
        }
        let layout = match layout {
            Some(layout) => {
                if layout.total_dim() != d {
                    return Err(TestbedError::InvalidSpec(
                        "layout does not cover the hessian dimension".into(),
                    ));
                }
                layout
            }
            None => ParamLayout::single_vector(d),
        };
        let mut init_rng = substream(0, "quadratic-init", 0);
        let init = DenseVector::from_fn(d, |_| init_rng.sample(StandardNormal));
        Ok(Self {
            layout,
            eigenvalues: vec![],
            hessian: Some(a),
            minimizer: DenseVector::zeros(d),
            noise,
            init,
        })
    }

    /// The Hessian as an explicit dense matrix (diagonal case included).
    pub fn dense_hessian(&self) -> DenseMatrix {
        match &self.hessian {
            Some(a) => a.clone(),
            None => {
                let d = self.eigenvalues.len();
                let mut a = DenseMatrix::zeros(d, d);
                for i in 0..d {
                    a[(i, i)] = self.eigenvalues[i];
                }
                a
            }
        }
    }

    pub fn minimizer(&self) -> &DenseVector {
        &self.minimizer
    }

    /// Overrides the starting point (defaults to `w* + init_scale * N(0, I)`).
    pub fn set_initial_point(&mut self, w0: DenseVector) {
        assert_eq!(w0.len(), self.layout.total_dim());
        self.init = w0;
    }

    fn a_times(&self, q: &DenseVector) -> DenseVector {
        match &self.hessian {
            Some(a) => a.matvec(q),
            None => DenseVector::from_fn(q.len(), |i| self.eigenvalues[i] * q[i]),
        }
    }

    fn noise_vec(&self, batch: &Batch) -> Option<DenseVector> {
        if self.noise == 0.0 {
            return None;
        }
        let mut rng = stream_from_seed(batch.nonce);
        Some(DenseVector::from_fn(self.dim(), |_| {
            self.noise * rng.sample::<f64, _>(StandardNormal)
        }))
    }
}

impl Problem for QuadraticProblem {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn initial_point(&self) -> DenseVector {
        self.init.clone()
    }

    /// `f_B(w) = 1/2 q^T A q + sigma eps_B . q` with `q = w - w*`, which keeps
    /// the minibatch value consistent with the minibatch gradient and makes
    /// the noise vanish in expectation.
    fn value(&self, w: &DenseVector, batch: &Batch) -> f64 {
        let q = DenseVector::from_fn(w.len(), |i| w[i] - self.minimizer[i]);
        let mut val = 0.5 * self.a_times(&q).dot(&q);
        if let Some(eps) = self.noise_vec(batch) {
            val += eps.dot(&q);
        }
        val
    }

    fn grad(&self, w: &DenseVector, batch: &Batch) -> DenseVector {
        let q = DenseVector::from_fn(w.len(), |i| w[i] - self.minimizer[i]);
        let mut g = self.a_times(&q);
        if let Some(eps) = self.noise_vec(batch) {
            g.axpy(1.0, &eps);
        }
        g
    }

    fn hvp(&self, _w: &DenseVector, dir: &DenseVector, _batch: &Batch) -> DenseVector {
        self.a_times(dir)
    }

    fn full_value(&self, w: &DenseVector) -> f64 {
        let q = DenseVector::from_fn(w.len(), |i| w[i] - self.minimizer[i]);
        0.5 * self.a_times(&q).dot(&q)
    }
}
