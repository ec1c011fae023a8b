//! Flat-vector <-> per-layer mapping and the rotation scope partitions.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::RotationError;

/// Shape of one named layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// `out_dim x in_dim` entries, row-major; row `r` holds all weights
    /// terminating at output neuron `r`.
    Matrix {
        out_dim: usize,
        in_dim: usize,
    },
    Vector {
        len: usize,
    },
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Matrix { out_dim, in_dim } => out_dim * in_dim,
            LayerKind::Vector { len } => len,
        }
    }
}

/// Declares a layer before ranges are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Embedding-style layers are stored `(in_dim, out_dim)`; set this to
    /// swap the roles of rows and columns in output-/input-wise scopes and
    /// in SVD factor application.
    pub transposed: bool,
}

impl LayerSpec {
    pub fn matrix(name: &str, out_dim: usize, in_dim: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Matrix { out_dim, in_dim },
            transposed: false,
        }
    }

    pub fn vector(name: &str, len: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Vector { len },
            transposed: false,
        }
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }
}

/// One layer with its assigned flat range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub transposed: bool,
    pub start: usize,
    pub end: usize,
}

impl Layer {
    pub fn flat_range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Ordered layers with contiguous, disjoint flat ranges covering `[0, d)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    layers: Vec<Layer>,
    total_dim: usize,
}

/// Which index sets a rotation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    None,
    Global,
    Layer,
    Output,
    Input,
    Svd,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::None => "none",
            Scope::Global => "global",
            Scope::Layer => "layer",
            Scope::Output => "output",
            Scope::Input => "input",
            Scope::Svd => "svd",
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = RotationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Scope::None),
            "global" => Ok(Scope::Global),
            "layer" => Ok(Scope::Layer),
            "output" => Ok(Scope::Output),
            "input" => Ok(Scope::Input),
            "svd" => Ok(Scope::Svd),
            other => Err(RotationError::UnknownScope(other.to_string())),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ParamLayout {
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self, RotationError> {
        let mut seen = BTreeSet::new();
        let mut layers = Vec::with_capacity(specs.len());
        let mut cursor = 0;
        for spec in specs {
            if spec.kind.param_count() == 0 {
                return Err(RotationError::EmptyLayer(spec.name));
            }
            if !seen.insert(spec.name.clone()) {
                return Err(RotationError::DuplicateLayer(spec.name));
            }
            let start = cursor;
            cursor += spec.kind.param_count();
            layers.push(Layer {
                name: spec.name,
                kind: spec.kind,
                transposed: spec.transposed,
                start,
                end: cursor,
            });
        }
        Ok(Self {
            layers,
            total_dim: cursor,
        })
    }

    /// A layout with one vector layer named `w` spanning everything.
    pub fn single_vector(dim: usize) -> Self {
        Self::new(vec![LayerSpec::vector("w", dim)]).expect("nonzero dim")
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_by_name(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Index of the layer whose flat range contains `i`.
    pub fn layer_of(&self, i: usize) -> Option<usize> {
        self.layers.iter().position(|l| l.flat_range().contains(&i))
    }

    pub fn matrix_layers(&self) -> impl Iterator<Item = &Layer> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Matrix { .. }))
    }
}

/// Splits the (optionally masked) parameter indices into the disjoint sets a
/// rotation of the given scope acts on.
///
/// - `Global`: one set covering the selection.
/// - `Layer` and `Svd`: one set per selected layer.
/// - `Output`: one set per matrix row (per column when `transposed`), one
///   set per vector layer.
/// - `Input`: one set per matrix column (per row when `transposed`), one
///   set per vector layer.
/// - `None`: no sets.
pub fn partition_indices(
    layout: &ParamLayout,
    scope: Scope,
    layer_mask: Option<&BTreeSet<String>>,
) -> Result<Vec<Vec<usize>>, RotationError> {
    if let Some(mask) = layer_mask {
        for name in mask {
            if layout.layer_by_name(name).is_none() {
                return Err(RotationError::UnknownLayer(name.clone()));
            }
        }
    }
    let selected: Vec<&Layer> = layout
        .layers
        .iter()
        .filter(|l| layer_mask.is_none_or(|m| m.contains(&l.name)))
        .collect();
    if scope != Scope::None && selected.is_empty() {
        return Err(RotationError::EmptyMaskSelection);
    }

    let mut sets: Vec<Vec<usize>> = Vec::new();
    match scope {
        Scope::None => {}
        Scope::Global => {
            let mut all = Vec::new();
            for layer in &selected {
                all.extend(layer.flat_range());
            }
            sets.push(all);
        }
        Scope::Layer | Scope::Svd => {
            for layer in &selected {
                sets.push(layer.flat_range().collect());
            }
        }
        Scope::Output | Scope::Input => {
            for layer in &selected {
                match layer.kind {
                    LayerKind::Vector { .. } => sets.push(layer.flat_range().collect()),
                    LayerKind::Matrix { out_dim, in_dim } => {
                        // Row-major storage: rows are contiguous runs of
                        // in_dim, columns are strided. `transposed` swaps
                        // which of the two a scope sees as "output".
                        let by_rows = match scope {
                            Scope::Output => !layer.transposed,
                            Scope::Input => layer.transposed,
                            _ => unreachable!(),
                        };
                        if by_rows {
                            for r in 0..out_dim {
                                let start = layer.start + r * in_dim;
                                sets.push((start..start + in_dim).collect());
                            }
                        } else {
                            for c in 0..in_dim {
                                sets.push(
                                    (0..out_dim).map(|r| layer.start + r * in_dim + c).collect(),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(sets)
}
