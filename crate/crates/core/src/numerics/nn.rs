//! Named parameter tensors and dense layers on the tape.

use serde::{Deserialize, Serialize};

use super::{Gradients, Rng, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Flat list of parameter tensors. Identifiers are insertion indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    meta: Vec<TensorMeta>,
    data: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> usize {
        assert_eq!(data.len(), rows * cols, "tensor data does not match its shape");
        self.meta.push(TensorMeta {
            name: name.into(),
            rows,
            cols,
        });
        self.data.push(data);
        self.data.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn meta(&self) -> &[TensorMeta] {
        &self.meta
    }

    pub fn get(&self, id: usize) -> &[f64] {
        &self.data[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Vec<f64> {
        &mut self.data[id]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.data
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.data.iter().map(Vec::len).collect()
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    /// Registers every tensor as a leaf, in identifier order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.meta
            .iter()
            .zip(&self.data)
            .map(|(m, d)| tape.leaf(d.clone(), m.rows, m.cols))
            .collect()
    }

    /// Gradient buffers aligned with the tensors.
    pub fn collect(&self, grads: &Gradients, vars: &[Var]) -> Vec<Vec<f64>> {
        vars.iter().map(|v| grads.wrt(*v).to_vec()).collect()
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.meta != other.meta {
            return Err(Error::Shape("parameter layout differs from the model definition".into()));
        }
        if other.data.iter().zip(&other.meta).any(|(d, m)| d.len() != m.rows * m.cols) {
            return Err(Error::Shape("parameter tensor length does not match its shape".into()));
        }
        Ok(())
    }
}

/// `y = W x + b` with `W` of shape `out × inp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        let w = (0..inp * out).map(|_| rng.uniform_in(-limit, limit)).collect();
        Self::from_parts(store, name, inp, out, w, vec![0.0; out])
    }

    pub fn from_parts(store: &mut ParamStore, name: &str, inp: usize, out: usize, w: Vec<f64>, b: Vec<f64>) -> Self {
        let w = store.add(format!("{name}.w"), out, inp, w);
        let b = store.add(format!("{name}.b"), out, 1, b);
        Self { w, b, inp, out }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let wx = tape.matvec(vars[self.w], x);
        tape.add(wx, vars[self.b])
    }
}
