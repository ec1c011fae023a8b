//! Small MLP testbed: one hidden layer, manual backprop, synthetic
//! sparse-feature data regenerated from seeds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Batch, Problem, TestbedError};
use crate::linalg::DenseVector;
use crate::rng::{stream_from_seed, substream};
use crate::rotations::{LayerSpec, ParamLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpTask {
    /// Squared loss against a random teacher network's outputs.
    Regression,
    /// Softmax cross-entropy against the teacher's argmax labels.
    Classification,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub task: MlpTask,
    pub dataset_seed: u64,
    pub dataset_size: usize,
    pub batch_size: usize,
    pub init_seed: u64,
    pub init_scale: f64,
    /// Probability that an input feature is nonzero.
    pub feature_density: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            in_dim: 6,
            hidden_dim: 8,
            out_dim: 4,
            activation: Activation::Tanh,
            task: MlpTask::Regression,
            dataset_seed: 1,
            dataset_size: 64,
            batch_size: 8,
            init_seed: 2,
            init_scale: 1.0,
            feature_density: 0.4,
        }
    }
}

/// Parameter offsets of the four layers inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub struct MlpProblem {
    spec: MlpSpec,
    layout: ParamLayout,
    offsets: Offsets,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    labels: Vec<usize>,
    init: DenseVector,
}

pub fn make_mlp(spec: &MlpSpec) -> Result<MlpProblem, TestbedError> {
    if spec.in_dim == 0 || spec.hidden_dim == 0 || spec.out_dim == 0 {
        return Err(TestbedError::InvalidSpec("widths must be positive".into()));
    }
    if spec.dataset_size == 0 || spec.batch_size == 0 {
        return Err(TestbedError::InvalidSpec(
            "dataset_size and batch_size must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.feature_density) {
        return Err(TestbedError::InvalidSpec(
            "feature_density must lie in [0, 1]".into(),
        ));
    }
    if param_count(spec) > 100_000 {
        return Err(TestbedError::InvalidSpec(format!(
            "{} parameters exceeds the desk-scale limit of 100000",
            param_count(spec)
        )));
    }
    let layout = ParamLayout::new(vec![
        LayerSpec::matrix("w1", spec.hidden_dim, spec.in_dim),
        LayerSpec::vector("b1", spec.hidden_dim),
        LayerSpec::matrix("w2", spec.out_dim, spec.hidden_dim),
        LayerSpec::vector("b2", spec.out_dim),
    ])?;
    let offsets = Offsets {
        w1: layout.layer_by_name("w1").unwrap().start,
        b1: layout.layer_by_name("b1").unwrap().start,
        w2: layout.layer_by_name("w2").unwrap().start,
        b2: layout.layer_by_name("b2").unwrap().start,
    };

    // Sparse inputs with per-feature scales spanning two decades, so
    // per-coordinate gradient magnitudes stay heterogeneous.
    let mut data_rng = substream(spec.dataset_seed, "mlp-data", 0);
    let scales: Vec<f64> = (0..spec.in_dim)
        .map(|_| 10f64.powf(data_rng.random_range(-1.0..1.0)))
        .collect();
    let mut inputs = Vec::with_capacity(spec.dataset_size);
    for _ in 0..spec.dataset_size {
        let row: Vec<f64> = (0..spec.in_dim)
            .map(|j| {
                if data_rng.random::<f64>() < spec.feature_density {
                    scales[j] * data_rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                }
            })
            .collect();
        inputs.push(row);
    }

    // Fixed random teacher of the same shape produces targets and labels.
    let mut teacher_rng = substream(spec.dataset_seed, "mlp-teacher", 0);
    let teacher = random_params(spec, &mut teacher_rng, 1.0);
    let scratch = Scratch::new(spec);
    let mut targets = Vec::with_capacity(spec.dataset_size);
    let mut labels = Vec::with_capacity(spec.dataset_size);
    for row in &inputs {
        let out = forward(
            spec,
            &offsets_of(spec),
            teacher.as_slice(),
            row,
            &mut scratch.clone(),
        )
        .1;
        let label = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        targets.push(out);
        labels.push(label);
    }

    let mut init_rng = substream(spec.init_seed, "mlp-init", 0);
    let init = random_params(spec, &mut init_rng, spec.init_scale);

    Ok(MlpProblem {
        spec: spec.clone(),
        layout,
        offsets,
        inputs,
        targets,
        labels,
        init,
    })
}

fn offsets_of(spec: &MlpSpec) -> Offsets {
    let w1 = 0;
    let b1 = w1 + spec.hidden_dim * spec.in_dim;
    let w2 = b1 + spec.hidden_dim;
    let b2 = w2 + spec.out_dim * spec.hidden_dim;
    Offsets { w1, b1, w2, b2 }
}

fn param_count(spec: &MlpSpec) -> usize {
    spec.hidden_dim * spec.in_dim + spec.hidden_dim + spec.out_dim * spec.hidden_dim + spec.out_dim
}

/// Gaussian weights scaled by `scale / sqrt(fan_in)`, zero biases.
fn random_params(spec: &MlpSpec, rng: &mut crate::rng::RngStream, scale: f64) -> DenseVector {
    let off = offsets_of(spec);
    let mut w = DenseVector::zeros(param_count(spec));
    let s1 = scale / (spec.in_dim as f64).sqrt();
    for i in 0..spec.hidden_dim * spec.in_dim {
        w[off.w1 + i] = s1 * rng.sample::<f64, _>(StandardNormal);
    }
    let s2 = scale / (spec.hidden_dim as f64).sqrt();
    for i in 0..spec.out_dim * spec.hidden_dim {
        w[off.w2 + i] = s2 * rng.sample::<f64, _>(StandardNormal);
    }
    w
}

fn activate(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
    }
}

fn activate_prime(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Per-example work buffers.
#[derive(Debug, Clone)]
struct Scratch {
    z1: Vec<f64>,
    h: Vec<f64>,
}

impl Scratch {
    fn new(spec: &MlpSpec) -> Self {
        Self {
            z1: vec![0.0; spec.hidden_dim],
            h: vec![0.0; spec.hidden_dim],
        }
    }
}

/// Forward pass; returns pre-activations via scratch and the output layer.
fn forward(
    spec: &MlpSpec,
    off: &Offsets,
    w: &[f64],
    x: &[f64],
    scratch: &mut Scratch,
) -> (Vec<f64>, Vec<f64>) {
    for i in 0..spec.hidden_dim {
        let mut z = w[off.b1 + i];
        let row = off.w1 + i * spec.in_dim;
        for j in 0..spec.in_dim {
            z += w[row + j] * x[j];
        }
        scratch.z1[i] = z;
        scratch.h[i] = activate(spec.activation, z);
    }
    let mut out = vec![0.0; spec.out_dim];
    for i in 0..spec.out_dim {
        let mut z = w[off.b2 + i];
        let row = off.w2 + i * spec.hidden_dim;
        for j in 0..spec.hidden_dim {
            z += w[row + j] * scratch.h[j];
        }
        out[i] = z;
    }
    (scratch.h.clone(), out)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl MlpProblem {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn dataset_size(&self) -> usize {
        self.inputs.len()
    }

    /// Distinct example indices for a batch, by partial Fisher-Yates from the
    /// batch nonce. A batch size covering the dataset yields every example.
    fn batch_indices(&self, batch: &Batch) -> Vec<usize> {
        let n = self.inputs.len();
        let k = self.spec.batch_size.min(n);
        if k == n {
            return (0..n).collect();
        }
        let mut rng = stream_from_seed(batch.nonce);
        let mut pool: Vec<usize> = (0..n).collect();
        for slot in 0..k {
            let j = rng.random_range(slot..n);
            pool.swap(slot, j);
        }
        pool.truncate(k);
        pool
    }

    fn loss_and_grad(
        &self,
        w: &DenseVector,
        examples: &[usize],
        want_grad: bool,
    ) -> (f64, Option<DenseVector>) {
        let spec = &self.spec;
        let off = &self.offsets;
        let wv = w.as_slice();
        let mut scratch = Scratch::new(spec);
        let mut grad = if want_grad {
            Some(DenseVector::zeros(w.len()))
        } else {
            None
        };
        let inv = 1.0 / examples.len() as f64;
        let mut loss = 0.0;

        for &idx in examples {
            let x = &self.inputs[idx];
            let (h, out) = forward(spec, off, wv, x, &mut scratch);

            // output delta = d loss / d logits, already averaged
            let mut delta2 = vec![0.0; spec.out_dim];
            match spec.task {
                MlpTask::Regression => {
                    let y = &self.targets[idx];
                    for i in 0..spec.out_dim {
                        let r = out[i] - y[i];
                        loss += 0.5 * r * r * inv;
                        delta2[i] = r * inv;
                    }
                }
                MlpTask::Classification => {
                    let probs = softmax(&out);
                    let label = self.labels[idx];
                    loss += -probs[label].max(1e-300).ln() * inv;
                    for i in 0..spec.out_dim {
                        let onehot = if i == label { 1.0 } else { 0.0 };
                        delta2[i] = (probs[i] - onehot) * inv;
                    }
                }
            }

            let Some(g) = grad.as_mut() else { continue };
            for i in 0..spec.out_dim {
                let row = off.w2 + i * spec.hidden_dim;
                for j in 0..spec.hidden_dim {
                    g[row + j] += delta2[i] * h[j];
                }
                g[off.b2 + i] += delta2[i];
            }
            for j in 0..spec.hidden_dim {
                let mut back = 0.0;
                for i in 0..spec.out_dim {
                    back += wv[off.w2 + i * spec.hidden_dim + j] * delta2[i];
                }
                let delta1 = back * activate_prime(spec.activation, scratch.z1[j]);
                let row = off.w1 + j * spec.in_dim;
                for k in 0..spec.in_dim {
                    g[row + k] += delta1 * x[k];
                }
                g[off.b1 + j] += delta1;
            }
        }
        (loss, grad)
    }
}

impl Problem for MlpProblem {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn initial_point(&self) -> DenseVector {
        self.init.clone()
    }

    fn value(&self, w: &DenseVector, batch: &Batch) -> f64 {
        self.loss_and_grad(w, &self.batch_indices(batch), false).0
    }

    fn grad(&self, w: &DenseVector, batch: &Batch) -> DenseVector {
        self.loss_and_grad(w, &self.batch_indices(batch), true)
            .1
            .unwrap()
    }

    /// Central finite difference of the gradient with step
    /// `h = 1e-5 * (1 + |w|_inf)`; error is O(h^2) on tanh networks.
    fn hvp(&self, w: &DenseVector, dir: &DenseVector, batch: &Batch) -> DenseVector {
        let h = 1e-5 * (1.0 + w.norm_inf());
        let mut wp = w.clone();
        wp.axpy(h, dir);
        let mut wm = w.clone();
        wm.axpy(-h, dir);
        let examples = self.batch_indices(batch);
        let gp = self.loss_and_grad(&wp, &examples, true).1.unwrap();
        let gm = self.loss_and_grad(&wm, &examples, true).1.unwrap();
        DenseVector::from_fn(w.len(), |i| (gp[i] - gm[i]) / (2.0 * h))
    }

    fn full_value(&self, w: &DenseVector) -> f64 {
        let all: Vec<usize> = (0..self.inputs.len()).collect();
        self.loss_and_grad(w, &all, false).0
    }
}
