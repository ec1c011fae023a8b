//! Declarative rotation specs and their compiled orthogonal operators.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{partition_indices, LayerKind, ParamLayout, Scope};
use super::RotationError;
use crate::linalg::{
    haar_orthogonal, random_permutation, svd_full, DenseMatrix, DenseVector, Permutation,
};
use crate::rng::RngStream;

/// Declarative description of a rotation; [`compile`] turns it into an
/// operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub scope: Scope,
    /// Dimension `n` of the Haar blocks used by random scopes.
    pub block_dim: usize,
    pub seed: u64,
    /// Reuse one Haar sample per block size everywhere instead of drawing
    /// each block independently.
    pub shared_blocks: bool,
    /// SVD scope only: refresh the factors at steps `t` with
    /// `t % refresh_interval == 0` (including `t = 0`).
    pub refresh_interval: u64,
    /// Restrict the rotation to these layers; `None` means all.
    pub layer_mask: Option<BTreeSet<String>>,
    /// Skip the inverse permutation on the way out and the forward
    /// permutation on the way back, turning `P^-1 B P` into `B P`. Adam
    /// cannot tell the difference; SGD comparisons should leave this off.
    pub omit_permutation_undo: bool,
}

impl Default for RotationSpec {
    fn default() -> Self {
        Self {
            scope: Scope::None,
            block_dim: 8,
            seed: 0,
            shared_blocks: true,
            refresh_interval: 200,
            layer_mask: None,
            omit_permutation_undo: false,
        }
    }
}

impl RotationSpec {
    pub fn with_scope(scope: Scope) -> Self {
        Self {
            scope,
            ..Self::default()
        }
    }

    pub fn validate(&self, layout: &ParamLayout) -> Result<(), RotationError> {
        if self.block_dim == 0 {
            return Err(RotationError::InvalidSpec(
                "block_dim must be at least 1".into(),
            ));
        }
        if self.scope == Scope::Svd {
            if self.refresh_interval == 0 {
                return Err(RotationError::InvalidSpec(
                    "refresh_interval must be at least 1 for svd scope".into(),
                ));
            }
            let has_matrix = layout.layers().iter().any(|l| {
                matches!(l.kind, LayerKind::Matrix { .. })
                    && self.layer_mask.as_ref().is_none_or(|m| m.contains(&l.name))
            });
            if !has_matrix {
                return Err(RotationError::InvalidSpec(
                    "svd scope requires at least one matrix layer".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The Haar blocks of one partition.
#[derive(Debug, Clone)]
pub enum BlockSet {
    /// `count` logical copies of one sample; O(n^2) memory however many
    /// blocks the partition needs.
    Shared {
        block: Arc<DenseMatrix>,
        count: usize,
    },
    Independent(Vec<DenseMatrix>),
}

impl BlockSet {
    pub fn count(&self) -> usize {
        match self {
            BlockSet::Shared { count, .. } => *count,
            BlockSet::Independent(blocks) => blocks.len(),
        }
    }

    pub fn get(&self, i: usize) -> &DenseMatrix {
        match self {
            BlockSet::Shared { block, .. } => block,
            BlockSet::Independent(blocks) => &blocks[i],
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, BlockSet::Shared { .. })
    }

    /// Side length of each block; 0 when there are none.
    pub fn block_dim(&self) -> usize {
        match self {
            BlockSet::Shared { block, .. } => block.rows(),
            BlockSet::Independent(blocks) => blocks.first().map_or(0, |b| b.rows()),
        }
    }
}

/// One partition's operator: permutation, block-diagonal Haar blocks, and an
/// optional residual block covering `len % n` leftover coordinates.
#[derive(Debug, Clone)]
pub struct PartitionOp {
    /// Sorted flat indices this partition acts on.
    pub indices: Vec<usize>,
    pub perm: Permutation,
    pub blocks: BlockSet,
    pub residual: Option<DenseMatrix>,
}

impl PartitionOp {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn residual_dim(&self) -> usize {
        self.residual.as_ref().map_or(0, |r| r.rows())
    }

    /// Applies the local orthogonal map (or its transpose) to the gathered
    /// partition coordinates.
    fn transform(&self, local: &[f64], inverse: bool, omit_undo: bool) -> Vec<f64> {
        let pre = if inverse && omit_undo {
            local.to_vec()
        } else {
            self.perm.apply_slice(local)
        };

        let n = self.blocks.block_dim();
        let count = self.blocks.count();
        let mut out = vec![0.0; pre.len()];
        for b in 0..count {
            let base = b * n;
            let block = self.blocks.get(b);
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    let coeff = if inverse {
                        block[(j, i)]
                    } else {
                        block[(i, j)]
                    };
                    acc += coeff * pre[base + j];
                }
                out[base + i] = acc;
            }
        }
        if let Some(res) = &self.residual {
            let base = count * n;
            let p = res.rows();
            for i in 0..p {
                let mut acc = 0.0;
                for j in 0..p {
                    let coeff = if inverse { res[(j, i)] } else { res[(i, j)] };
                    acc += coeff * pre[base + j];
                }
                out[base + i] = acc;
            }
        }

        if !inverse && omit_undo {
            out
        } else {
            self.perm.apply_inverse_slice(&out)
        }
    }
}

/// SVD factors for one matrix layer.
#[derive(Debug, Clone)]
pub struct SvdLayerOp {
    pub layer_name: String,
    pub start: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub transposed: bool,
    /// `(U, V)` with `U` square over the semantic rows and `V` over the
    /// semantic columns; `None` means identity (before the first refresh, and
    /// always for zero gradients).
    pub factors: Option<(DenseMatrix, DenseMatrix)>,
}

impl SvdLayerOp {
    /// The layer's matrix in semantic orientation, read out of a flat vector.
    pub fn semantic_matrix(&self, g: &DenseVector) -> DenseMatrix {
        self.gather(g)
    }

    fn sem_dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.in_dim, self.out_dim)
        } else {
            (self.out_dim, self.in_dim)
        }
    }

    /// Gathers the semantic-orientation matrix from the flat vector.
    fn gather(&self, g: &DenseVector) -> DenseMatrix {
        let (rows, cols) = self.sem_dims();
        DenseMatrix::from_fn(rows, cols, |i, j| {
            let (r, c) = if self.transposed { (j, i) } else { (i, j) };
            g[self.start + r * self.in_dim + c]
        })
    }

    fn scatter(&self, m: &DenseMatrix, out: &mut DenseVector) {
        let (rows, cols) = self.sem_dims();
        for i in 0..rows {
            for j in 0..cols {
                let (r, c) = if self.transposed { (j, i) } else { (i, j) };
                out[self.start + r * self.in_dim + c] = m[(i, j)];
            }
        }
    }

    fn transform(&self, g: &DenseVector, out: &mut DenseVector, inverse: bool) {
        let Some((u, v)) = &self.factors else {
            return; // identity factors: flat entries already copied
        };
        let m = self.gather(g);
        let rotated = if inverse {
            // M -> U M V^T
            u.matmul(&m.matmul(&v.transpose()))
        } else {
            // M -> U^T M V
            u.transpose().matmul(&m.matmul(v))
        };
        self.scatter(&rotated, out);
    }
}

#[derive(Debug, Clone)]
pub enum CompiledKind {
    Identity,
    Random(Vec<PartitionOp>),
    Svd(Vec<SvdLayerOp>),
}

/// A materialized orthogonal operator over the flat parameter vector.
///
/// Immutable once compiled; [`svd_refresh`](CompiledRotation::svd_refresh)
/// returns a new value rather than mutating.
#[derive(Debug, Clone)]
pub struct CompiledRotation {
    dim: usize,
    scope: Scope,
    omit_permutation_undo: bool,
    kind: CompiledKind,
}

impl CompiledRotation {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            scope: Scope::None,
            omit_permutation_undo: false,
            kind: CompiledKind::Identity,
        }
    }

    /// Wraps an explicit dense orthogonal matrix as a single-partition
    /// rotation. Rejects matrices whose orthogonality residual exceeds 1e-10.
    pub fn from_dense(m: DenseMatrix) -> Result<Self, RotationError> {
        if m.rows() != m.cols() {
            return Err(RotationError::InvalidSpec(format!(
                "dense rotation must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let residual = m.orthogonality_residual();
        if residual > 1e-10 {
            return Err(RotationError::NotOrthogonal { residual });
        }
        let dim = m.rows();
        Ok(Self {
            dim,
            scope: Scope::Global,
            omit_permutation_undo: false,
            kind: CompiledKind::Random(vec![PartitionOp {
                indices: (0..dim).collect(),
                perm: Permutation::identity(dim),
                blocks: BlockSet::Independent(vec![m]),
                residual: None,
            }]),
        })
    }

    pub(crate) fn from_parts(
        dim: usize,
        scope: Scope,
        omit_permutation_undo: bool,
        kind: CompiledKind,
    ) -> Self {
        Self {
            dim,
            scope,
            omit_permutation_undo,
            kind,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn omit_permutation_undo(&self) -> bool {
        self.omit_permutation_undo
    }

    pub fn kind(&self) -> &CompiledKind {
        &self.kind
    }

    pub fn partitions(&self) -> &[PartitionOp] {
        match &self.kind {
            CompiledKind::Random(parts) => parts,
            _ => &[],
        }
    }

    pub fn svd_layers(&self) -> &[SvdLayerOp] {
        match &self.kind {
            CompiledKind::Svd(layers) => layers,
            _ => &[],
        }
    }

    /// Rotates `g` into the rotated basis.
    pub fn apply(&self, g: &DenseVector) -> Result<DenseVector, RotationError> {
        self.transform(g, false)
    }

    /// Rotates `u` back to the original basis (transposed blocks, inverse
    /// permutation).
    pub fn apply_inverse(&self, u: &DenseVector) -> Result<DenseVector, RotationError> {
        self.transform(u, true)
    }

    fn transform(&self, g: &DenseVector, inverse: bool) -> Result<DenseVector, RotationError> {
        if g.len() != self.dim {
            return Err(RotationError::LengthMismatch {
                expected: self.dim,
                got: g.len(),
            });
        }
        match &self.kind {
            CompiledKind::Identity => Ok(g.clone()),
            CompiledKind::Random(parts) => {
                let mut out = g.clone();
                for part in parts {
                    let local: Vec<f64> = part.indices.iter().map(|&i| g[i]).collect();
                    let rotated = part.transform(&local, inverse, self.omit_permutation_undo);
                    for (slot, &i) in part.indices.iter().enumerate() {
                        out[i] = rotated[slot];
                    }
                }
                Ok(out)
            }
            CompiledKind::Svd(layers) => {
                let mut out = g.clone();
                for layer in layers {
                    layer.transform(g, &mut out, inverse);
                }
                Ok(out)
            }
        }
    }

    /// Materializes the operator as a dense `d x d` matrix by applying it to
    /// every canonical basis vector. Meant for desk-scale checks.
    pub fn to_dense(&self) -> Result<DenseMatrix, RotationError> {
        let d = self.dim;
        let mut dense = DenseMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DenseVector::zeros(d);
            e[j] = 1.0;
            let col = self.apply(&e)?;
            for i in 0..d {
                dense[(i, j)] = col[i];
            }
        }
        Ok(dense)
    }

    /// Replaces the SVD factors with those of the given per-matrix-layer
    /// gradients (stored shape `out_dim x in_dim`, layout order). Zero
    /// gradients get identity factors.
    pub fn svd_refresh(
        &self,
        per_layer_grads: &[DenseMatrix],
    ) -> Result<CompiledRotation, RotationError> {
        let CompiledKind::Svd(layers) = &self.kind else {
            return Err(RotationError::InvalidSpec(
                "svd_refresh requires an svd-scope rotation".into(),
            ));
        };
        if per_layer_grads.len() != layers.len() {
            return Err(RotationError::LengthMismatch {
                expected: layers.len(),
                got: per_layer_grads.len(),
            });
        }
        let mut refreshed = Vec::with_capacity(layers.len());
        for (op, grad) in layers.iter().zip(per_layer_grads) {
            if grad.rows() != op.out_dim || grad.cols() != op.in_dim {
                return Err(RotationError::InvalidSpec(format!(
                    "gradient for layer '{}' has shape {}x{}, expected {}x{}",
                    op.layer_name,
                    grad.rows(),
                    grad.cols(),
                    op.out_dim,
                    op.in_dim
                )));
            }
            let sem = if op.transposed {
                grad.transpose()
            } else {
                grad.clone()
            };
            let factors = if sem.frobenius_norm() == 0.0 {
                None
            } else {
                let (u, _s, v) = svd_full(&sem)?;
                Some((u, v))
            };
            refreshed.push(SvdLayerOp {
                factors,
                ..op.clone()
            });
        }
        Ok(CompiledRotation {
            dim: self.dim,
            scope: self.scope,
            omit_permutation_undo: self.omit_permutation_undo,
            kind: CompiledKind::Svd(refreshed),
        })
    }
}

/// Compiles a rotation spec against a layout.
///
/// Each partition of size `s` gets `floor(s/n)` Haar blocks plus a residual
/// Haar block of size `p = s - n*floor(s/n)` when `p > 0` (`[[1.0]]` when
/// `p = 1`), behind a fresh random permutation of the partition. When `n > s`
/// the whole partition becomes one Haar block of size `s`. With
/// `shared_blocks` one sample per block size is reused everywhere; residuals
/// are always drawn fresh.
pub fn compile(
    spec: &RotationSpec,
    layout: &ParamLayout,
    rng: &mut RngStream,
) -> Result<CompiledRotation, RotationError> {
    spec.validate(layout)?;
    let dim = layout.total_dim();

    match spec.scope {
        Scope::None => Ok(CompiledRotation::identity(dim)),
        Scope::Svd => {
            let sets = partition_indices(layout, Scope::Svd, spec.layer_mask.as_ref())?;
            drop(sets); // validates the mask; svd acts per matrix layer below
            let mut layers = Vec::new();
            for layer in layout.layers() {
                let masked_out = spec
                    .layer_mask
                    .as_ref()
                    .is_some_and(|m| !m.contains(&layer.name));
                if masked_out {
                    continue;
                }
                if let LayerKind::Matrix { out_dim, in_dim } = layer.kind {
                    layers.push(SvdLayerOp {
                        layer_name: layer.name.clone(),
                        start: layer.start,
                        out_dim,
                        in_dim,
                        transposed: layer.transposed,
                        factors: None,
                    });
                }
            }
            Ok(CompiledRotation::from_parts(
                dim,
                Scope::Svd,
                spec.omit_permutation_undo,
                CompiledKind::Svd(layers),
            ))
        }
        scope => {
            let sets = partition_indices(layout, scope, spec.layer_mask.as_ref())?;
            let mut cache: BTreeMap<usize, Arc<DenseMatrix>> = BTreeMap::new();
            let mut parts = Vec::with_capacity(sets.len());
            for indices in sets {
                let s = indices.len();
                let (block_dim, count) = if spec.block_dim > s {
                    (s, 1) // fallback: one block spanning the whole partition
                } else {
                    (spec.block_dim, s / spec.block_dim)
                };
                let blocks = if spec.shared_blocks {
                    let block = match cache.get(&block_dim) {
                        Some(b) => Arc::clone(b),
                        None => {
                            let b = Arc::new(haar_orthogonal(block_dim, rng)?);
                            cache.insert(block_dim, Arc::clone(&b));
                            b
                        }
                    };
                    BlockSet::Shared { block, count }
                } else {
                    let mut blocks = Vec::with_capacity(count);
                    for _ in 0..count {
                        blocks.push(haar_orthogonal(block_dim, rng)?);
                    }
                    BlockSet::Independent(blocks)
                };
                let p = s - block_dim * count;
                let residual = match p {
                    0 => None,
                    1 => Some(DenseMatrix::identity(1)),
                    _ => Some(haar_orthogonal(p, rng)?),
                };
                let perm = random_permutation(s, rng);
                parts.push(PartitionOp {
                    indices,
                    perm,
                    blocks,
                    residual,
                });
            }
            Ok(CompiledRotation::from_parts(
                dim,
                scope,
                spec.omit_permutation_undo,
                CompiledKind::Random(parts),
            ))
        }
    }
}
