//! Event-relational graph: cross-channel last-event lags mapped through an
//! even exponential kernel, averaged over a time grid and Monte-Carlo
//! realizations, plus the Fisher-z match against observed correlations.

use serde::{Deserialize, Serialize};

use crate::epde::EventRealization;
use crate::numerics::{Tape, Var};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_GRID: usize = 16;
pub const DEFAULT_MC_SAMPLES: usize = 8;
/// Margin keeping correlations and edge scores strictly inside `(-1, 1)`.
pub const ATANH_CLAMP: f64 = 1e-7;

/// Most recent event at or before `t`, or 0 if there is none.
pub fn last_event_before(events: &[f64], t: f64) -> f64 {
    match events.partition_point(|e| *e <= t) {
        0 => 0.0,
        k => events[k - 1],
    }
}

/// Index form of [`last_event_before`].
pub fn last_event_index(events: &[f64], t: f64) -> Option<usize> {
    events.partition_point(|e| *e <= t).checked_sub(1)
}

/// `exp(-α |lag|)`.
pub fn edge_score(lag: f64, alpha: f64) -> f64 {
    (-alpha * lag.abs()).exp()
}

/// `M` midpoints of a uniform partition of `[0, window]`.
pub fn time_grid(window: f64, m: usize) -> Vec<f64> {
    (0..m).map(|i| window * (i as f64 + 0.5) / m as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub alpha: f64,
    pub grid: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub channels: usize,
    /// Row-major `C × C`.
    pub values: Vec<f64>,
    pub symmetrized: bool,
    pub diagonal_zeroed: bool,
    pub provenance: Option<Provenance>,
}

impl Adjacency {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let c = self.channels;
        (0..c).all(|i| (0..c).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Upper-triangle entries `i < j` in row order.
    pub fn upper(&self) -> Vec<f64> {
        let c = self.channels;
        (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).map(|(i, j)| self.get(i, j)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.channels) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    fn finish(mut values: Vec<f64>, c: usize, symmetrize: bool, provenance: Option<Provenance>) -> Self {
        for i in 0..c {
            values[i * c + i] = 0.0;
        }
        if symmetrize {
            for i in 0..c {
                for j in i + 1..c {
                    let m = 0.5 * (values[i * c + j] + values[j * c + i]);
                    values[i * c + j] = m;
                    values[j * c + i] = m;
                }
            }
        }
        Self {
            channels: c,
            values,
            symmetrized: symmetrize,
            diagonal_zeroed: true,
            provenance,
        }
    }
}

/// Time- and sample-averaged lag graph.
pub fn build_adjacency(samples: &[EventRealization], grid: &[f64], alpha: f64, symmetrize: bool) -> Result<Adjacency> {
    if samples.is_empty() || grid.is_empty() {
        return Err(Error::InvalidParameter("adjacency needs at least one sample and grid point".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("edge decay must be positive, got {alpha}")));
    }
    let c = samples[0].n_channels();
    if let Some(bad) = samples.iter().find(|s| s.n_channels() != c) {
        return Err(Error::Shape(format!(
            "realizations disagree on channel count: {c} vs {}",
            bad.n_channels()
        )));
    }
    let mut acc = vec![0.0; c * c];
    let mut last = vec![0.0; c];
    for s in samples {
        for &t in grid {
            for (ch, l) in last.iter_mut().enumerate() {
                *l = last_event_before(s.channel(ch), t);
            }
            for i in 0..c {
                for j in 0..c {
                    acc[i * c + j] += edge_score(last[i] - last[j], alpha);
                }
            }
        }
    }
    let norm = 1.0 / (samples.len() * grid.len()) as f64;
    acc.iter_mut().for_each(|v| *v *= norm);
    let provenance = Provenance {
        alpha,
        grid: grid.len(),
        samples: samples.len(),
        seed: samples[0].seed(),
    };
    Ok(Adjacency::finish(acc, c, symmetrize, Some(provenance)))
}

/// Average of `φ_α` over a list of `C × C` lag matrices.
pub fn average_edges(lags: &[Vec<f64>], c: usize, alpha: f64) -> Adjacency {
    let mut acc = vec![0.0; c * c];
    for l in lags {
        for (a, x) in acc.iter_mut().zip(l) {
            *a += edge_score(*x, alpha);
        }
    }
    let norm = 1.0 / lags.len().max(1) as f64;
    acc.iter_mut().for_each(|v| *v *= norm);
    Adjacency::finish(acc, c, false, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKernel {
    Exp,
    Gauss,
    Inv1,
}

/// Graph from channel-mean summaries of a `C × L` trajectory.
pub fn build_adjacency_from_trajectory(z: &[Vec<f64>], gamma: f64, kernel: TrajectoryKernel) -> Result<Adjacency> {
    if z.iter().any(Vec::is_empty) || !(gamma > 0.0) {
        return Err(Error::InvalidParameter("trajectory graph needs L >= 1 and gamma > 0".into()));
    }
    let c = z.len();
    let means: Vec<f64> = z.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
    let mut w = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let d = (means[i] - means[j]).abs();
            w[i * c + j] = match kernel {
                TrajectoryKernel::Exp => (-gamma * d).exp(),
                TrajectoryKernel::Gauss => (-gamma * d * d).exp(),
                TrajectoryKernel::Inv1 => 1.0 / (1.0 + gamma * d),
            };
        }
    }
    Ok(Adjacency::finish(w, c, true, None))
}

/// Times at which a sampled series crosses `level` from below, linearly
/// interpolated between samples.
pub fn upward_crossings(t: &[f64], x: &[f64], level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..t.len().min(x.len()) {
        let (a, b) = (x[k - 1] - level, x[k] - level);
        if a < 0.0 && b >= 0.0 {
            out.push(t[k - 1] + (t[k] - t[k - 1]) * (-a / (b - a)));
        }
    }
    out
}

/// Pearson correlations of `C` channels, clamped into `(-1, 1)`.
pub fn pearson_corr(x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let c = x.len();
    let t = x.first().map_or(0, Vec::len);
    if x.iter().any(|row| row.len() != t) {
        return Err(Error::Shape("channels must share one length".into()));
    }
    let mut centred = Vec::with_capacity(c);
    for (ch, row) in x.iter().enumerate() {
        let mean = row.iter().sum::<f64>() / t as f64;
        let d: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateChannel(ch));
        }
        centred.push(d.into_iter().map(|v| v / norm).collect::<Vec<_>>());
    }
    let lim = 1.0 - ATANH_CLAMP;
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let r: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            let r = r.clamp(-lim, lim);
            out[i * c + j] = r;
            out[j * c + i] = r;
        }
    }
    Ok(out)
}

fn clamped_atanh(x: f64) -> f64 {
    let lim = 1.0 - ATANH_CLAMP;
    x.clamp(-lim, lim).atanh()
}

/// `Σ_{i<j} (z_obs - z_pred)² / (2σ²) + ½ ln σ²` with
/// `z_pred = atanh(2A - 1)` and `z_obs = atanh(s)`.
pub fn fisher_z_reg(a: &Adjacency, s_obs: &[f64], sigma: f64) -> Result<f64> {
    let c = a.channels;
    if s_obs.len() != c * c {
        return Err(Error::Shape(format!("correlation matrix must be {c}x{c}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let mut total = 0.0;
    for i in 0..c {
        for j in i + 1..c {
            let d = clamped_atanh(s_obs[i * c + j]) - clamped_atanh(2.0 * a.get(i, j) - 1.0);
            total += d * d / (2.0 * sigma * sigma) + sigma.ln();
        }
    }
    Ok(total)
}

/// Tape form of [`fisher_z_reg`] over upper-triangle edge scores `pairs`.
pub fn fisher_z_tape(tape: &mut Tape, pairs: Var, s_obs_upper: &[f64], sigma: f64) -> Var {
    let lim = 1.0 - ATANH_CLAMP;
    let z_obs: Vec<f64> = s_obs_upper.iter().map(|s| clamped_atanh(*s)).collect();
    let centred = tape.scale(pairs, 2.0);
    let centred = tape.shift(centred, -1.0);
    let centred = tape.clamp(centred, -lim, lim);
    let z_pred = tape.atanh(centred);
    let z_obs = tape.constant_vec(z_obs);
    let d = tape.sub(z_obs, z_pred);
    let sq = tape.square(d);
    let total = tape.sum(sq);
    let total = tape.scale(total, 1.0 / (2.0 * sigma * sigma));
    tape.shift(total, s_obs_upper.len() as f64 * sigma.ln())
}
