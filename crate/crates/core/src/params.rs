//! Named parameter tensors.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamSet`]; equal to its `Var` index on a
/// tape built with [`crate::autodiff::Tape::with_params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered, named collection of parameter matrices. Biases and row gains are
/// stored as `1 × n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    entries: Vec<(String, Array2<S>)>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<S>) -> ParamId {
        let name = name.into();
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        let w = Array2::from_shape_fn((rows, cols), |_| S::of(rng.gen_range(-bound..bound)));
        self.insert(name, w)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: S) -> ParamId {
        self.insert(name, Array2::from_elem((rows, cols), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<S>)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn get(&self, id: ParamId) -> &Array2<S> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<S>> {
        self.entries.iter_mut().map(|(_, p)| p)
    }

    /// Flat view of entry `k` across all tensors (row-major, in order).
    pub fn flat_get(&self, mut k: usize) -> S {
        for (_, p) in &self.entries {
            if k < p.len() {
                return p.as_slice().expect("standard layout")[k];
            }
            k -= p.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut k: usize, v: S) {
        for (_, p) in &mut self.entries {
            if k < p.len() {
                p.as_slice_mut().expect("standard layout")[k] = v;
                return;
            }
            k -= p.len();
        }
        panic!("flat index out of range");
    }

    /// Same tensors in another precision.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, p)| (n.clone(), p.mapv(|v| T::of(v.to_f64_lossy()))))
                .collect(),
        }
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.entries
            .iter()
            .map(|(n, p)| TensorRecord {
                name: n.clone(),
                shape: [p.nrows(), p.ncols()],
                data: p.iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect()
    }

    pub fn from_records(records: &[TensorRecord]) -> Result<Self> {
        let mut set = ParamSet::new();
        for r in records {
            let arr = Array2::from_shape_vec((r.shape[0], r.shape[1]), r.data.iter().map(|&v| S::of(v)).collect())
                .map_err(|e| Error::format("parameter tensor", format!("{}: {e}", r.name)))?;
            set.insert(r.name.clone(), arr);
        }
        Ok(set)
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn same_layout<T>(&self, other: &ParamSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, x), (b, y))| a == b && x.dim() == y.dim())
    }
}

/// Serialized form of one named tensor.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}
