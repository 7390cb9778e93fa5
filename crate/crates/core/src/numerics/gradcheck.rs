//! Central finite-difference checks for tape gradients.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Magnitudes below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-4;

/// One differentiable input: values and `(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub value: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Input {
    pub fn vec(value: Vec<f64>) -> Self {
        let n = value.len();
        Self { value, rows: n, cols: 1 }
    }

    pub fn matrix(value: Vec<f64>, rows: usize, cols: usize) -> Self {
        Self { value, rows, cols }
    }
}

fn eval<F>(inputs: &[Input], build: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|i| tape.leaf(i.value.clone(), i.rows, i.cols))
        .collect();
    let out = build(&mut tape, &vars);
    if tape.len_of(out) != 1 {
        return Err(Error::Shape("gradient check needs a scalar output".into()));
    }
    Ok((tape, vars, out))
}

/// Largest relative error between tape gradients of the scalar built by
/// `build` and central differences with step `h`. Errors are relative to
/// `max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub fn max_relative_error<F>(inputs: &[Input], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let (tape, vars, out) = eval(inputs, &build)?;
    let grads = tape.grad(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).to_vec();
        for (k, a) in analytic.iter().enumerate() {
            let x = inputs[i].value[k];
            probe[i].value[k] = x + h;
            let (t1, _, o1) = eval(&probe, &build)?;
            probe[i].value[k] = x - h;
            let (t2, _, o2) = eval(&probe, &build)?;
            probe[i].value[k] = x;
            let numeric = (t1.scalar(o1) - t2.scalar(o2)) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            if !err.is_finite() {
                return Err(Error::NonFiniteGradient(format!("gradient check on input {i}[{k}]")));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
