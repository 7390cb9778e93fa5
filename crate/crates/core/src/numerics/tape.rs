//! Dynamic reverse-mode tape over dense vectors and matrices.
//!
//! Values are row-major `f64` buffers with a `(rows, cols)` shape; a vector is
//! `(n, 1)` and a scalar `(1, 1)`. Nodes are appended in evaluation order, so
//! every parent precedes its children and the backward sweep is a single
//! reverse pass.
//!
//! Numerical failures do not abort the forward pass: the first non-finite
//! value poisons the tape and [`Tape::grad`] reports it as a domain error.
//! Shape mismatches are programming errors and panic.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Atanh(Var),
    Square(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Clamp(Var, f64, f64),
    Slice(Var, usize),
    Concat(Vec<Var>),
    Custom(Vec<(Var, Vec<f64>)>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    poison: Option<String>,
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to `v`; all zeros if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }
}

fn sigmoid(x: f64) -> f64 {
    super::sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First numerical failure recorded on this tape, if any.
    pub fn poisoned(&self) -> Option<&str> {
        self.poison.as_deref()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        if self.poison.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.poison = Some(format!("{} produced a non-finite value", op_name(&op)));
        }
        self.nodes.push(Node {
            op,
            value,
            rows,
            cols,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "node is not scalar");
        n.value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    // ---- leaves -------------------------------------------------------

    /// Trainable leaf with the given shape.
    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.push(Op::Leaf, value, rows, cols)
    }

    pub fn leaf_vec(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.leaf(value, n, 1)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(vec![value], 1, 1)
    }

    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape mismatch");
        self.push(Op::Const, value, rows, cols)
    }

    pub fn constant_vec(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.constant(value, n, 1)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(vec![value], 1, 1)
    }

    // ---- element-wise -------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> (usize, usize) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert_eq!(sa, sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
        sa
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.same_shape(a, b, op_name(&op));
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(op, v, r, c)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = &self.nodes[a.0];
        let (r, c) = (n.rows, n.cols);
        let v = n.value.iter().map(|x| f(*x)).collect();
        self.push(op, v, r, c)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.map(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |x| k * x)
    }

    /// `a + k` element-wise.
    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Shift(a), |x| x + k)
    }

    /// Every element of `a` times the scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        self.map(a, Op::MulScalar(a, s), |x| x * k)
    }

    /// Every element of `a` plus the scalar node `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        self.map(a, Op::AddScalar(a, s), |x| x + k)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), super::softplus)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), |x| if x > 0.0 { x.ln() } else { f64::NAN })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn atanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Atanh(a), |x| if x.abs() < 1.0 { x.atanh() } else { f64::NAN })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    // ---- reductions and structure ---------------------------------------

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = super::softmax(&self.nodes[a.0].value);
        let n = v.len();
        self.push(Op::Softmax(a), v, n, 1)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), vec![s], 1, 1)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a), vec![s], 1, 1)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "dot");
        let s = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(Op::Dot(a, b), vec![s], 1, 1)
    }

    /// Matrix `(r, c)` times vector of length `c`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (r, c) = self.shape(w);
        assert_eq!(self.len_of(x), c, "matvec: {r}x{c} matrix with vector of length {}", self.len_of(x));
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out = (0..r)
            .map(|i| wv[i * c..(i + 1) * c].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec(w, x), out, r, 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for p in 0..k {
                let aip = av[i * k + p];
                for j in 0..c {
                    out[i * c + j] += aip * bv[p * c + j];
                }
            }
        }
        self.push(Op::MatMul(a, b), out, r, c)
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(Op::Slice(a, start), v, len, 1)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        self.slice(a, i, 1)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v: Vec<f64> = parts.iter().flat_map(|p| self.nodes[p.0].value.iter().copied()).collect();
        let n = v.len();
        self.push(Op::Concat(parts.to_vec()), v, n, 1)
    }

    /// Scalar node with a caller-supplied local gradient: `local[k]` holds
    /// `∂out/∂parents[k]` element-wise.
    pub fn custom(&mut self, value: f64, parents: Vec<(Var, Vec<f64>)>) -> Var {
        for (p, g) in &parents {
            assert_eq!(self.len_of(*p), g.len(), "custom: local gradient length mismatch");
        }
        if self.poison.is_none() && parents.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            self.poison = Some("custom op produced a non-finite local gradient".into());
        }
        self.push(Op::Custom(parents), vec![value], 1, 1)
    }

    // ---- backward -----------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn grad(&self, loss: Var) -> Result<Gradients> {
        if let Some(msg) = &self.poison {
            return Err(Error::Domain(msg.clone()));
        }
        assert_eq!(self.len_of(loss), 1, "loss must be scalar");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.backprop(idx, &g, &mut grads);
            grads[idx] = g;
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if g.is_empty() {
                *g = vec![0.0; self.nodes[i].value.len()];
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(usize) -> f64| {
            let n = self.nodes[v.0].value.len();
            let slot = &mut grads[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; n];
            }
            for (i, s) in slot.iter_mut().enumerate() {
                *s += f(i);
            }
        };
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                acc(*a, &mut |i| g[i]);
                acc(*b, &mut |i| g[i]);
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |i| g[i]);
                acc(*b, &mut |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).clone(), val(*b).clone());
                acc(*a, &mut |i| g[i] * bv[i]);
                acc(*b, &mut |i| g[i] * av[i]);
            }
            Op::Div(a, b) => {
                let bv = val(*b).clone();
                acc(*a, &mut |i| g[i] / bv[i]);
                acc(*b, &mut |i| -g[i] * out[i] / bv[i]);
            }
            Op::Neg(a) => acc(*a, &mut |i| -g[i]),
            Op::Scale(a, k) => acc(*a, &mut |i| k * g[i]),
            Op::Shift(a) => acc(*a, &mut |i| g[i]),
            Op::MulScalar(a, s) => {
                let k = val(*s)[0];
                let av = val(*a);
                let ds: f64 = g.iter().zip(av).map(|(x, y)| x * y).sum();
                acc(*a, &mut |i| g[i] * k);
                acc(*s, &mut |_| ds);
            }
            Op::AddScalar(a, s) => {
                let ds: f64 = g.iter().sum();
                acc(*a, &mut |i| g[i]);
                acc(*s, &mut |_| ds);
            }
            Op::MatVec(w, x) => {
                let (r, c) = self.shape(*w);
                let wv = val(*w).clone();
                let xv = val(*x).clone();
                acc(*w, &mut |k| g[k / c] * xv[k % c]);
                acc(*x, &mut |j| (0..r).map(|i| wv[i * c + j] * g[i]).sum());
            }
            Op::MatMul(a, b) => {
                let (r, k) = self.shape(*a);
                let (_, c) = self.shape(*b);
                let av = val(*a).clone();
                let bv = val(*b).clone();
                acc(*a, &mut |ip| {
                    let (i, p) = (ip / k, ip % k);
                    (0..c).map(|j| g[i * c + j] * bv[p * c + j]).sum()
                });
                acc(*b, &mut |pj| {
                    let (p, j) = (pj / c, pj % c);
                    (0..r).map(|i| av[i * k + p] * g[i * c + j]).sum()
                });
            }
            Op::Softplus(a) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| g[i] * sigmoid(av[i]));
            }
            Op::Tanh(a) => acc(*a, &mut |i| g[i] * (1.0 - out[i] * out[i])),
            Op::Exp(a) => acc(*a, &mut |i| g[i] * out[i]),
            Op::Log(a) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| g[i] / av[i]);
            }
            Op::Sigmoid(a) => acc(*a, &mut |i| g[i] * out[i] * (1.0 - out[i])),
            Op::Relu(a) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| if av[i] > 0.0 { g[i] } else { 0.0 });
            }
            Op::Abs(a) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| g[i] * sign(av[i]));
            }
            Op::Atanh(a) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| g[i] / (1.0 - av[i] * av[i]));
            }
            Op::Square(a) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| 2.0 * av[i] * g[i]);
            }
            Op::Clamp(a, lo, hi) => {
                let av = val(*a).clone();
                acc(*a, &mut |i| if av[i] >= *lo && av[i] <= *hi { g[i] } else { 0.0 });
            }
            Op::Softmax(a) => {
                let gs: f64 = g.iter().zip(out).map(|(x, s)| x * s).sum();
                acc(*a, &mut |i| out[i] * (g[i] - gs));
            }
            Op::Sum(a) => acc(*a, &mut |_| g[0]),
            Op::Mean(a) => {
                let n = self.len_of(*a) as f64;
                acc(*a, &mut |_| g[0] / n);
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a).clone(), val(*b).clone());
                acc(*a, &mut |i| g[0] * bv[i]);
                acc(*b, &mut |i| g[0] * av[i]);
            }
            Op::Slice(a, start) => {
                let (s, len) = (*start, g.len());
                acc(*a, &mut |i| if i >= s && i < s + len { g[i - s] } else { 0.0 });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.len_of(*p);
                    acc(*p, &mut |i| g[offset + i]);
                    offset += n;
                }
            }
            Op::Custom(parents) => {
                for (p, local) in parents {
                    acc(*p, &mut |i| g[0] * local[i]);
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Const => "constant",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::Scale(..) => "scale",
        Op::Shift(..) => "shift",
        Op::MulScalar(..) => "mul_scalar",
        Op::AddScalar(..) => "add_scalar",
        Op::MatVec(..) => "matvec",
        Op::MatMul(..) => "matmul",
        Op::Softplus(..) => "softplus",
        Op::Tanh(..) => "tanh",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::Abs(..) => "abs",
        Op::Atanh(..) => "atanh",
        Op::Square(..) => "square",
        Op::Softmax(..) => "softmax",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Dot(..) => "dot",
        Op::Clamp(..) => "clamp",
        Op::Slice(..) => "slice",
        Op::Concat(..) => "concat",
        Op::Custom(..) => "custom",
    }
}
