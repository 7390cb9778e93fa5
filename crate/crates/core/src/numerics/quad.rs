//! Adaptive Gauss-Kronrod (7/15) quadrature with global interval bisection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Hard cap on live subintervals.
pub const MAX_INTERVALS: usize = 1 << 16;

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub tol: f64,
    pub max_intervals: usize,
}

impl QuadOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_intervals: MAX_INTERVALS,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |x: f64| -> Result<f64> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFiniteIntegrand { at: x })
        }
    };
    let fc = eval(centre)?;
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for (i, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let s = eval(centre - dx)? + eval(centre + dx)?;
        k += w * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    Ok(Segment {
        a,
        b,
        value: k * half,
        error: ((k - g) * half).abs(),
    })
}

/// `∫_a^b f` to within an estimated absolute error of `tol`.
pub fn quad_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    quad_with(f, a, b, QuadOptions::new(tol))
}

pub fn quad_with<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "quadrature needs finite a < b, got [{a}, {b}]"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quadrature tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let first = kronrod(&f, a, b)?;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    while total_err > opts.tol {
        if heap.len() >= opts.max_intervals {
            return Err(Error::ToleranceNotMet {
                tol: opts.tol,
                estimate: total_err,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval cannot be split further in floating point
            return Err(Error::ToleranceNotMet {
                tol: opts.tol,
                estimate: total_err,
                intervals: heap.len() + 1,
            });
        }
        let left = kronrod(&f, worst.a, mid)?;
        let right = kronrod(&f, mid, worst.b)?;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // refresh the running error sum from scratch now and then to stop drift
        if heap.len() % 256 == 0 {
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    // sum small contributions first
    let mut parts: Vec<f64> = heap.into_iter().map(|s| s.value).collect();
    parts.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    Ok(parts.into_iter().sum())
}
