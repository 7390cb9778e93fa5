//! Negative-ELBO-style objective over toy records.

use serde::{Deserialize, Serialize};

use super::model::{Draw, Forward, Model};
use crate::erg::{fisher_z_tape, pearson_corr, time_grid};
use crate::ivp_kl::{kl_bound_tape, ConstantPrior};
use crate::numerics::{Rng, Tape, Var};
use crate::par::Exec;
use crate::toygen::ToyRecord;
use crate::{Error, Result};

/// Term weights. `ce` and `kl` default to 1; setting `beta = lif = 0`
/// removes the electrophysiology priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub ce: f64,
    pub kl: f64,
    pub beta: f64,
    pub lif: f64,
    pub aux: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            kl: 1.0,
            beta: 0.1,
            lif: 1e-3,
            // Gaussian likelihood weight 1 / (2 σ_η²) at the default noise
            aux: 1.0 / (2.0 * 0.07 * 0.07),
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.ce, self.kl, self.beta, self.lif, self.aux];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("objective weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted component values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub ce: f64,
    pub recon: f64,
    pub kl_t: f64,
    pub kl_tau: f64,
    pub lif: f64,
    pub erg: f64,
    pub total: f64,
}

impl Components {
    pub fn weighted_total(&self, w: &ObjectiveWeights) -> f64 {
        w.ce * self.ce + w.aux * self.recon + w.kl * (self.kl_t + self.kl_tau) + w.lif * self.lif + w.beta * self.erg
    }

    pub(crate) fn add_scaled(&mut self, o: &Components, k: f64) {
        self.ce += k * o.ce;
        self.recon += k * o.recon;
        self.kl_t += k * o.kl_t;
        self.kl_tau += k * o.kl_tau;
        self.lif += k * o.lif;
        self.erg += k * o.erg;
        self.total += k * o.total;
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("ce", self.ce),
            ("recon", self.recon),
            ("kl_t", self.kl_t),
            ("kl_tau", self.kl_tau),
            ("lif", self.lif),
            ("erg", self.erg),
            ("total", self.total),
        ]
    }
}

/// Component nodes on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ComponentVars {
    pub ce: Var,
    pub recon: Var,
    pub kl_t: Var,
    pub kl_tau: Var,
    pub lif: Var,
    pub erg: Var,
    pub total: Var,
}

impl ComponentVars {
    pub fn values(&self, tape: &Tape) -> Components {
        Components {
            ce: tape.scalar(self.ce),
            recon: tape.scalar(self.recon),
            kl_t: tape.scalar(self.kl_t),
            kl_tau: tape.scalar(self.kl_tau),
            lif: tape.scalar(self.lif),
            erg: tape.scalar(self.erg),
            total: tape.scalar(self.total),
        }
    }
}

fn sum_scalars(tape: &mut Tape, xs: &[Var]) -> Var {
    if xs.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let v = tape.concat(xs);
    tape.sum(v)
}

/// `logsumexp(logits) - logits[label]`.
fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Var {
    let m = tape.value(logits).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.shift(logits, -m);
    let e = tape.exp(shifted);
    let s = tape.sum(e);
    let lse = tape.log(s);
    let lse = tape.shift(lse, m);
    let picked = tape.index(logits, label);
    tape.sub(lse, picked)
}

/// Index of the last event time at or before `t`, by value.
fn last_index(tape: &Tape, times: &[Var], t: f64) -> Option<usize> {
    times.iter().rposition(|v| tape.scalar(*v) <= t)
}

/// Trapezoidal `∫₀ᵂ (r̂ - r̃)²` where `r̂` interpolates the step rates
/// between step centres and `r̃` is the gated prior rate.
fn lif_term(tape: &mut Tape, model: &Model, fwd: &Forward) -> Var {
    let cfg = &model.config;
    let n = fwd.times.len();
    let g = cfg.lif_grid.max(2);
    let h = cfg.window / (g - 1) as f64;
    let zero = tape.constant_scalar(0.0);
    let mut centres = Vec::with_capacity(n);
    let mut prev = zero;
    for &t in &fwd.times {
        let s = tape.add(prev, t);
        centres.push(tape.scale(s, 0.5));
        prev = t;
    }
    let centre_vals: Vec<f64> = centres.iter().map(|c| tape.scalar(*c)).collect();
    let mut terms = Vec::with_capacity(g);
    for k in 0..g {
        let t = h * k as f64;
        let r_hat = match centre_vals.partition_point(|c| *c <= t) {
            0 => fwd.step_rates[0],
            j if j == n => fwd.step_rates[n - 1],
            j => {
                let (a, b) = (j - 1, j);
                let num = tape.neg(centres[a]);
                let num = tape.shift(num, t);
                let den = tape.sub(centres[b], centres[a]);
                let w = tape.div(num, den);
                let dv = tape.sub(fwd.step_rates[b], fwd.step_rates[a]);
                let step = tape.mul(w, dv);
                tape.add(fwd.step_rates[a], step)
            }
        };
        let r_tilde = match last_index(tape, &fwd.times, t) {
            None => {
                let gate = crate::dlif::refractory_gate(t, 0.0, cfg.refractory);
                tape.scale(fwd.rate, gate)
            }
            Some(i) => {
                let d = tape.neg(fwd.times[i]);
                let d = tape.shift(d, t);
                let e = tape.scale(d, -1.0 / cfg.refractory);
                let e = tape.exp(e);
                let gate = tape.neg(e);
                let gate = tape.shift(gate, 1.0);
                let gate = tape.clamp(gate, crate::dlif::GATE_FLOOR, 1.0);
                tape.mul(gate, fwd.rate)
            }
        };
        let d = tape.sub(r_hat, r_tilde);
        let sq = tape.square(d);
        let wgt = if k == 0 || k == g - 1 { 0.5 * h } else { h };
        terms.push(tape.scale(sq, wgt));
    }
    sum_scalars(tape, &terms)
}

/// Time-averaged lag graph of a channel group against the observed
/// correlations.
fn erg_term(tape: &mut Tape, model: &Model, fwds: &[Forward], group: &[&ToyRecord]) -> Result<Var> {
    let cfg = &model.config;
    let c = fwds.len();
    let grid = time_grid(cfg.window, cfg.erg_grid);
    let zero = tape.constant_scalar(0.0);
    let mut pair_sums: Vec<Vec<Var>> = vec![Vec::with_capacity(grid.len()); c * (c - 1) / 2];
    for &t in &grid {
        let last: Vec<Var> = fwds
            .iter()
            .map(|f| last_index(tape, &f.times, t).map_or(zero, |i| f.times[i]))
            .collect();
        let mut p = 0;
        for i in 0..c {
            for j in i + 1..c {
                let lag = tape.sub(last[i], last[j]);
                let a = tape.abs(lag);
                let a = tape.scale(a, -cfg.erg_alpha);
                pair_sums[p].push(tape.exp(a));
                p += 1;
            }
        }
    }
    let pairs: Vec<Var> = pair_sums
        .iter()
        .map(|v| {
            let s = sum_scalars(tape, v);
            tape.scale(s, 1.0 / grid.len() as f64)
        })
        .collect();
    let pairs = tape.concat(&pairs);
    let obs: Vec<Vec<f64>> = group.iter().map(|r| r.obs.clone()).collect();
    let corr = pearson_corr(&obs)?;
    let upper: Vec<f64> = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).map(|(i, j)| corr[i * c + j]).collect();
    Ok(fisher_z_tape(tape, pairs, &upper, cfg.erg_sigma))
}

/// Objective for one channel group (a single record, or several records
/// stacked as pseudo-channels). Returns the component nodes; the caller
/// owns the tape.
pub fn group_objective(
    tape: &mut Tape,
    vars: &[Var],
    model: &Model,
    group: &[&ToyRecord],
    weights: &ObjectiveWeights,
    rng: Option<(&mut Rng, f64)>,
) -> Result<ComponentVars> {
    if group.is_empty() {
        return Err(Error::InvalidParameter("objective needs at least one record".into()));
    }
    let cfg = &model.config;
    let prior = ConstantPrior {
        refractory: Some(cfg.refractory),
    };
    let mut rng = rng;
    let mut fwds = Vec::with_capacity(group.len());
    let (mut ce, mut recon, mut kl_t, mut kl_tau, mut lif) = (vec![], vec![], vec![], vec![], vec![]);
    for rec in group {
        let draw = match rng.as_mut() {
            Some((r, temp)) => Draw::Relaxed {
                rng: r,
                temperature: *temp,
            },
            None => Draw::Mean,
        };
        let fwd = model.forward(tape, vars, &rec.obs, draw)?;
        let label = cfg.class_index(&rec.band)?;
        let prior_tau = *cfg
            .interval_priors
            .get(label)
            .ok_or_else(|| Error::Shape(format!("no interval prior for class {label}")))?;
        ce.push(cross_entropy(tape, fwd.logits, label));
        let target = tape.constant_vec(rec.obs.clone());
        let d = tape.sub(fwd.recon, target);
        let sq = tape.square(d);
        recon.push(tape.sum(sq));
        for mix in &fwd.mixtures {
            kl_t.push(kl_bound_tape(tape, mix, fwd.rate, prior, cfg.window, cfg.kl_eps, cfg.kl_steps)?);
            kl_tau.push(mix.kl_tau(tape, prior_tau));
        }
        lif.push(lif_term(tape, model, &fwd));
        fwds.push(fwd);
    }
    let erg = if group.len() >= 2 && weights.beta > 0.0 {
        erg_term(tape, model, &fwds, group)?
    } else {
        tape.constant_scalar(0.0)
    };
    let ce = sum_scalars(tape, &ce);
    let recon = sum_scalars(tape, &recon);
    let kl_t = sum_scalars(tape, &kl_t);
    let kl_tau = sum_scalars(tape, &kl_tau);
    let lif = sum_scalars(tape, &lif);
    let parts = [
        tape.scale(ce, weights.ce),
        tape.scale(recon, weights.aux),
        tape.scale(kl_t, weights.kl),
        tape.scale(kl_tau, weights.kl),
        tape.scale(lif, weights.lif),
        tape.scale(erg, weights.beta),
    ];
    let total = sum_scalars(tape, &parts);
    Ok(ComponentVars {
        ce,
        recon,
        kl_t,
        kl_tau,
        lif,
        erg,
        total,
    })
}

/// Loss, component means and parameter gradients over a batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub components: Components,
    pub grads: Vec<Vec<f64>>,
}

/// Sampling setup for a batch: relaxed draws keyed by `(key, group index)`,
/// or deterministic means when `None`.
#[derive(Debug, Clone, Copy)]
pub struct Sampling {
    pub rng_key: u64,
    pub seed: u64,
    pub temperature: f64,
}

fn check_components(c: &Components) -> Result<()> {
    for (name, v) in c.named() {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name.to_string()));
        }
    }
    Ok(())
}

/// Mean objective over `groups`, with gradients when `with_grad` is set.
pub fn objective(
    groups: &[Vec<&ToyRecord>],
    model: &Model,
    weights: &ObjectiveWeights,
    sampling: Option<Sampling>,
    with_grad: bool,
    exec: Exec,
) -> Result<BatchResult> {
    weights.validate()?;
    if groups.is_empty() {
        return Err(Error::InvalidParameter("objective needs a nonempty batch".into()));
    }
    let per_group = exec.try_map_range(groups.len(), |g| -> Result<(Components, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let mut rng = sampling.map(|s| Rng::new(s.seed).split(s.rng_key).split(g as u64));
        let rng_arg = match (rng.as_mut(), sampling) {
            (Some(r), Some(s)) => Some((r, s.temperature)),
            _ => None,
        };
        let cv = group_objective(&mut tape, &vars, model, &groups[g], weights, rng_arg)?;
        let comps = cv.values(&tape);
        check_components(&comps)?;
        let grads = if with_grad {
            let grads = tape.grad(cv.total).map_err(|e| Error::NonFiniteLoss(format!("gradient: {e}")))?;
            Some(model.store.collect(&grads, &vars))
        } else {
            None
        };
        Ok((comps, grads))
    })?;
    let n = groups.len() as f64;
    let mut comps = Components::default();
    let mut grads: Vec<Vec<f64>> = if with_grad {
        model.store.tensors().iter().map(|t| vec![0.0; t.len()]).collect()
    } else {
        Vec::new()
    };
    // sums run in group order so results do not depend on scheduling
    for (c, g) in &per_group {
        comps.add_scaled(c, 1.0 / n);
        if let Some(g) = g {
            for (acc, x) in grads.iter_mut().zip(g) {
                acc.iter_mut().zip(x).for_each(|(a, b)| *a += b / n);
            }
        }
    }
    Ok(BatchResult {
        loss: comps.total,
        components: comps,
        grads,
    })
}

/// Groups records as single channels, or as stacks of `channels`
/// same-band records in multichannel mode.
pub fn make_groups<'a>(records: &[&'a ToyRecord], channels: usize) -> Vec<Vec<&'a ToyRecord>> {
    if channels <= 1 {
        return records.iter().map(|r| vec![*r]).collect();
    }
    let mut by_band: Vec<(String, Vec<&ToyRecord>)> = Vec::new();
    for r in records {
        match by_band.iter_mut().find(|(b, _)| *b == r.band) {
            Some((_, v)) => v.push(*r),
            None => by_band.push((r.band.clone(), vec![*r])),
        }
    }
    let mut out = Vec::new();
    for (_, recs) in by_band {
        for chunk in recs.chunks(channels) {
            out.push(chunk.to_vec());
        }
    }
    out
}
