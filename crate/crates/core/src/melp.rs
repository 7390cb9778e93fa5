//! Mean-evolving lognormal mixtures for inter-event intervals.
//!
//! Each component has a target mean interval `τ̃` and log-scale `s`; its
//! log-mean is tied to them by `μ = ln τ̃ - s²/2` so the component mean is
//! exactly `τ̃` and the mixture mean is `Σ w τ̃`.

use serde::{Deserialize, Serialize};

use crate::numerics::{normal_cdf, Rng, Tape, Var};
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Lognormal log-mean whose mean equals `tau_tilde`.
pub fn mean_match_mu(tau_tilde: f64, s: f64) -> Result<f64> {
    if !(tau_tilde > 0.0) || !(s > 0.0) {
        return Err(Error::Domain(format!(
            "mean matching needs positive inputs, got τ̃ = {tau_tilde}, s = {s}"
        )));
    }
    Ok(tau_tilde.ln() - 0.5 * s * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LognormalMixture {
    weights: Vec<f64>,
    tau_tilde: Vec<f64>,
    scales: Vec<f64>,
    mu: Vec<f64>,
}

impl LognormalMixture {
    pub fn new(weights: Vec<f64>, tau_tilde: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || tau_tilde.len() != k || scales.len() != k {
            return Err(Error::Shape(format!(
                "mixture needs K matching components, got {k}/{}/{}",
                tau_tilde.len(),
                scales.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || ((weights.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
            return Err(Error::Domain("mixture weights must lie on the simplex".into()));
        }
        let mu = tau_tilde
            .iter()
            .zip(&scales)
            .map(|(t, s)| mean_match_mu(*t, *s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            tau_tilde,
            scales,
            mu,
        })
    }

    pub fn single(tau_tilde: f64, s: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![tau_tilde], vec![s])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tau_tilde(&self) -> &[f64] {
        &self.tau_tilde
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Closed-form mean `Σ w τ̃`.
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.tau_tilde).map(|(w, t)| w * t).sum()
    }

    pub fn density(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("interval must be positive, got {tau}")));
        }
        Ok(self.density_unchecked(tau))
    }

    pub(crate) fn density_unchecked(&self, tau: f64) -> f64 {
        let lt = tau.ln();
        (0..self.k())
            .map(|j| self.weights[j] * lognormal_pdf_ln(lt, self.mu[j], self.scales[j]))
            .sum()
    }

    pub fn cdf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let lt = tau.ln();
        (0..self.k())
            .map(|j| self.weights[j] * normal_cdf((lt - self.mu[j]) / self.scales[j]))
            .sum()
    }
}

/// Lognormal density at `exp(lt)`.
pub(crate) fn lognormal_pdf_ln(lt: f64, mu: f64, s: f64) -> f64 {
    let z = (lt - mu) / s;
    (-0.5 * z * z - lt - s.ln() - LN_SQRT_2PI).exp()
}

/// Closed-form mean.
pub fn mixture_mean(mix: &LognormalMixture) -> f64 {
    mix.mean()
}

pub fn mixture_density(tau: f64, mix: &LognormalMixture) -> Result<f64> {
    mix.density(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SampleMode {
    Hard,
    Relaxed { temperature: f64 },
}

/// Noise consumed by one draw, enough to replay it on a tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleTrace {
    Hard { component: usize, noise: f64 },
    Relaxed { gumbel: Vec<f64>, noise: f64, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSample {
    pub tau: f64,
    pub trace: SampleTrace,
}

/// Draws one interval; the trace allows replaying it with [`MixtureVars::replay`].
pub fn sample_interval(mix: &LognormalMixture, rng: &mut Rng, mode: SampleMode) -> Result<IntervalSample> {
    match mode {
        SampleMode::Hard => {
            let k = rng.categorical(&mix.weights);
            let noise = rng.normal();
            Ok(IntervalSample {
                tau: (mix.mu[k] + mix.scales[k] * noise).exp(),
                trace: SampleTrace::Hard { component: k, noise },
            })
        }
        SampleMode::Relaxed { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::InvalidTemperature(temperature));
            }
            let gumbel: Vec<f64> = (0..mix.k()).map(|_| rng.gumbel()).collect();
            let noise = rng.normal();
            let logits: Vec<f64> = mix.weights.iter().zip(&gumbel).map(|(w, g)| (w.ln() + g) / temperature).collect();
            let y = crate::numerics::softmax(&logits);
            let m: f64 = y.iter().zip(&mix.mu).map(|(a, b)| a * b).sum();
            let s: f64 = y.iter().zip(&mix.scales).map(|(a, b)| a * b).sum();
            Ok(IntervalSample {
                tau: (m + s * noise).exp(),
                trace: SampleTrace::Relaxed {
                    gumbel,
                    noise,
                    temperature,
                },
            })
        }
    }
}

/// `KL(LN(μq, sq²) ‖ LN(μp, sp²))`.
pub fn kl_lognormal(mu_q: f64, s_q: f64, mu_p: f64, s_p: f64) -> f64 {
    let d = mu_q - mu_p;
    (s_p / s_q).ln() + (s_q * s_q + d * d) / (2.0 * s_p * s_p) - 0.5
}

/// Categorical `KL(w ‖ prior)`; zero-weight components contribute nothing.
pub fn kl_categorical(w: &[f64], prior: &[f64]) -> f64 {
    w.iter()
        .zip(prior)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Single-lognormal prior over intervals, mean-matched like the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPrior {
    pub mean_interval: f64,
    pub s: f64,
}

impl IntervalPrior {
    pub fn mu(&self) -> f64 {
        self.mean_interval.ln() - 0.5 * self.s * self.s
    }
}

/// Component-wise upper bound on the mixture KL against a single lognormal
/// prior with uniform weight prior.
pub fn kl_tau(mix: &LognormalMixture, prior: IntervalPrior) -> f64 {
    let k = mix.k();
    let mu_p = prior.mu();
    let comp: f64 = (0..k)
        .map(|j| mix.weights[j] * kl_lognormal(mix.mu[j], mix.scales[j], mu_p, prior.s))
        .sum();
    comp + kl_categorical(&mix.weights, &vec![1.0 / k as f64; k])
}

/// Mixture parameters living on a tape. `logits` is kept so relaxed samples
/// can avoid taking the log of a softmax.
#[derive(Debug, Clone, Copy)]
pub struct MixtureVars {
    pub logits: Var,
    pub weights: Var,
    pub tau_tilde: Var,
    pub s: Var,
    pub mu: Var,
}

impl MixtureVars {
    /// Mean-matched parameters from weight logits, target means and scales.
    pub fn from_tau(tape: &mut Tape, logits: Var, tau_tilde: Var, s: Var) -> Self {
        let weights = tape.softmax(logits);
        let ln_tau = tape.log(tau_tilde);
        let s2 = tape.square(s);
        let half = tape.scale(s2, 0.5);
        let mu = tape.sub(ln_tau, half);
        Self {
            logits,
            weights,
            tau_tilde,
            s,
            mu,
        }
    }

    /// Parameters given directly by log-means; `τ̃` is derived.
    pub fn from_mu(tape: &mut Tape, logits: Var, mu: Var, s: Var) -> Self {
        let weights = tape.softmax(logits);
        let s2 = tape.square(s);
        let half = tape.scale(s2, 0.5);
        let e = tape.add(mu, half);
        let tau_tilde = tape.exp(e);
        Self {
            logits,
            weights,
            tau_tilde,
            s,
            mu,
        }
    }

    pub fn value(&self, tape: &Tape) -> Result<LognormalMixture> {
        let weights = tape.value(self.weights).to_vec();
        let tau = tape.value(self.tau_tilde).to_vec();
        let s = tape.value(self.s).to_vec();
        // weights come from a softmax; renormalise away rounding drift
        let total: f64 = weights.iter().sum();
        LognormalMixture::new(weights.iter().map(|w| w / total).collect(), tau, s)
    }

    pub fn mean(&self, tape: &mut Tape) -> Var {
        tape.dot(self.weights, self.tau_tilde)
    }

    /// Rebuilds the sampled interval from its trace so gradients flow
    /// pathwise into the mixture parameters.
    pub fn replay(&self, tape: &mut Tape, trace: &SampleTrace) -> Var {
        match trace {
            SampleTrace::Hard { component, noise } => {
                let mu = tape.index(self.mu, *component);
                let s = tape.index(self.s, *component);
                let sn = tape.scale(s, *noise);
                let e = tape.add(mu, sn);
                tape.exp(e)
            }
            SampleTrace::Relaxed {
                gumbel,
                noise,
                temperature,
            } => {
                let g = tape.constant_vec(gumbel.clone());
                let perturbed = tape.add(self.logits, g);
                let scaled = tape.scale(perturbed, 1.0 / temperature);
                let y = tape.softmax(scaled);
                let mu = tape.dot(y, self.mu);
                let s = tape.dot(y, self.s);
                let sn = tape.scale(s, *noise);
                let e = tape.add(mu, sn);
                tape.exp(e)
            }
        }
    }

    /// Tape version of [`kl_tau`].
    pub fn kl_tau(&self, tape: &mut Tape, prior: IntervalPrior) -> Var {
        let k = tape.len_of(self.weights);
        let mu_p = prior.mu();
        let sp2 = prior.s * prior.s;
        // ln(sp) - ln(sq) + (sq² + (μq - μp)²)/(2 sp²) - 1/2
        let ln_s = tape.log(self.s);
        let neg_ln_s = tape.neg(ln_s);
        let d = tape.shift(self.mu, -mu_p);
        let d2 = tape.square(d);
        let s2 = tape.square(self.s);
        let num = tape.add(s2, d2);
        let quad = tape.scale(num, 1.0 / (2.0 * sp2));
        let comp = tape.add(neg_ln_s, quad);
        let comp = tape.shift(comp, prior.s.ln() - 0.5);
        let weighted = tape.dot(self.weights, comp);
        // Σ w (ln w + ln K), with ln w = logits - logsumexp written via ln(softmax)
        let ln_w = tape.log(self.weights);
        let ln_w = tape.shift(ln_w, (k as f64).ln());
        let cat = tape.dot(self.weights, ln_w);
        tape.add(weighted, cat)
    }
}
