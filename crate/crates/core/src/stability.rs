//! Monte-Carlo checks of the lag-graph perturbation bounds.
//!
//! Each trial draws `MS` antisymmetric base-lag matrices (one per grid point
//! and Monte-Carlo sample), perturbs them with lag noise `ξ`, and compares
//! the averaged edge matrices `A` and `Ã = A + Δ`. The bounds checked are
//!
//! * bounded noise `|ξ| ≤ ε∞`: `|Δ_ij| ≤ α ε∞` and `‖Δ‖_F ≤ α ε∞ √(C(C-1))`,
//!   together with the sharper per-trial `|Δ_ij| ≤ α mean|ξ_ij|` and
//!   `‖Δ‖_F ≤ (α/MS) Σ ‖Ξ‖_F`;
//! * Gaussian noise: `P(|Δ_ij| ≥ τ) ≤ 2 exp(-MS τ² / (2 α² σ²))`;
//! * Gaussian noise: `E|Δ_ij| ≤ α σ √(2/π)` and `E‖Δ‖_F ≤ α σ √(2/π) √(C(C-1))`.

use serde::{Deserialize, Serialize};

use crate::erg::edge_score;
use crate::numerics::Rng;
use crate::par::Exec;
use crate::{Error, Result};

/// Relative slack for floating-point rounding in the deterministic bounds.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum NoiseModel {
    Uniform { eps_inf: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            NoiseModel::Uniform { eps_inf } => rng.uniform_in(-eps_inf, eps_inf),
            NoiseModel::Gaussian { sigma } => sigma * rng.normal(),
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            NoiseModel::Uniform { eps_inf } => eps_inf,
            NoiseModel::Gaussian { sigma } => sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub channels: usize,
    pub alpha: f64,
    pub noise: NoiseModel,
    /// Grid points times Monte-Carlo samples.
    pub ms: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub max_dev: f64,
    pub frob_dev: f64,
    /// Mean over off-diagonal entries of `|Δ_ij|`.
    pub mean_abs_dev: f64,
    /// `α ε∞` (bounded noise only).
    pub entry_bound: Option<f64>,
    pub frob_bound: Option<f64>,
    /// Largest `|Δ_ij| - α mean|ξ_ij|` over pairs; nonpositive when the
    /// averaged Lipschitz bound holds.
    pub avg_entry_excess: f64,
    /// `‖Δ‖_F - (α/MS) Σ ‖Ξ‖_F`.
    pub avg_frob_excess: f64,
    pub violation: bool,
    #[serde(skip)]
    deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub tau: f64,
    pub bound: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationSummary {
    pub entry_mean: f64,
    pub entry_se: f64,
    pub entry_bound: f64,
    pub frob_mean: f64,
    pub frob_se: f64,
    pub frob_bound: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub config: StabilityConfig,
    pub records: Vec<TrialRecord>,
    pub max_dev: f64,
    pub violations: usize,
    pub tail: Vec<TailRow>,
    pub expectation: Option<ExpectationSummary>,
}

impl StabilityReport {
    /// Fails with [`Error::TheoremViolation`] if any bound was exceeded.
    pub fn ensure(&self) -> Result<()> {
        let tail = self.tail.iter().filter(|r| r.violation).count();
        let exp = self.expectation.as_ref().is_some_and(|e| e.violation);
        if self.violations > 0 || tail > 0 || exp {
            return Err(Error::TheoremViolation(format!(
                "{} trial violations, {tail} tail exceedances, expectation exceeded: {exp}",
                self.violations
            )));
        }
        Ok(())
    }

    /// One line per trial.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let (noise, level) = match c.noise {
            NoiseModel::Uniform { eps_inf } => ("uniform", eps_inf),
            NoiseModel::Gaussian { sigma } => ("gaussian", sigma),
        };
        let mut out = String::from(
            "trial,alpha,noise,level,ms,channels,max_dev,frob_dev,mean_abs_dev,entry_bound,frob_bound,avg_entry_excess,avg_frob_excess,violation\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.trial,
                c.alpha,
                noise,
                level,
                c.ms,
                c.channels,
                r.max_dev,
                r.frob_dev,
                r.mean_abs_dev,
                opt(r.entry_bound),
                opt(r.frob_bound),
                r.avg_entry_excess,
                r.avg_frob_excess,
                r.violation
            ));
        }
        out
    }
}

fn validate(cfg: &StabilityConfig) -> Result<()> {
    if cfg.channels < 2 || cfg.ms == 0 || cfg.trials == 0 {
        return Err(Error::InvalidParameter(
            "stability checks need C >= 2, MS >= 1 and at least one trial".into(),
        ));
    }
    if !(cfg.alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", cfg.alpha)));
    }
    match cfg.noise {
        NoiseModel::Uniform { eps_inf } if !(eps_inf >= 0.0) => Err(Error::InvalidParameter(format!(
            "noise bound must be nonnegative, got {eps_inf}"
        ))),
        NoiseModel::Gaussian { sigma } if !(sigma > 0.0) => {
            Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")))
        }
        _ => Ok(()),
    }
}

fn run_trial(cfg: &StabilityConfig, trial: usize) -> TrialRecord {
    let c = cfg.channels;
    let pairs = c * (c - 1) / 2;
    let mut rng = Rng::new(cfg.seed).split(trial as u64);
    let mut base = vec![0.0; pairs];
    let mut delta = vec![0.0; pairs];
    let mut abs_xi = vec![0.0; pairs];
    let mut frob_xi_sum = 0.0;
    for _ in 0..cfg.ms {
        let mut frob_sq = 0.0;
        for p in 0..pairs {
            base[p] = rng.uniform_in(-1.0, 1.0);
            let xi = cfg.noise.draw(&mut rng);
            delta[p] += edge_score(base[p] + xi, cfg.alpha) - edge_score(base[p], cfg.alpha);
            abs_xi[p] += xi.abs();
            // both (i,j) and (j,i) carry the noise, with opposite sign
            frob_sq += 2.0 * xi * xi;
        }
        frob_xi_sum += frob_sq.sqrt();
    }
    let ms = cfg.ms as f64;
    delta.iter_mut().for_each(|d| *d /= ms);
    let max_dev = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let frob_dev = (2.0 * delta.iter().map(|d| d * d).sum::<f64>()).sqrt();
    let mean_abs_dev = delta.iter().map(|d| d.abs()).sum::<f64>() / pairs as f64;
    let avg_entry_excess = delta
        .iter()
        .zip(&abs_xi)
        .map(|(d, x)| d.abs() - cfg.alpha * x / ms)
        .fold(f64::NEG_INFINITY, f64::max);
    let avg_frob_excess = frob_dev - cfg.alpha * frob_xi_sum / ms;
    let slack = |b: f64| b * (1.0 + ROUNDING) + f64::EPSILON;
    let (entry_bound, frob_bound) = match cfg.noise {
        NoiseModel::Uniform { eps_inf } => {
            let e = cfg.alpha * eps_inf;
            (Some(e), Some(e * ((c * (c - 1)) as f64).sqrt()))
        }
        NoiseModel::Gaussian { .. } => (None, None),
    };
    let violation = entry_bound.is_some_and(|b| max_dev > slack(b))
        || frob_bound.is_some_and(|b| frob_dev > slack(b))
        || avg_entry_excess > slack(0.0)
        || avg_frob_excess > slack(0.0) + ROUNDING * frob_dev;
    TrialRecord {
        trial,
        max_dev,
        frob_dev,
        mean_abs_dev,
        entry_bound,
        frob_bound,
        avg_entry_excess,
        avg_frob_excess,
        violation,
        deviations: delta,
    }
}

fn run_trials(cfg: &StabilityConfig, exec: Exec) -> Result<(Vec<TrialRecord>, usize, f64)> {
    validate(cfg)?;
    let records = exec.map_range(cfg.trials, |t| run_trial(cfg, t));
    let violations = records.iter().filter(|r| r.violation).count();
    let max_dev = records.iter().fold(0.0f64, |m, r| m.max(r.max_dev));
    Ok((records, violations, max_dev))
}

/// Deterministic bounds under uniform noise, without failing on violations.
pub fn deterministic_report(cfg: StabilityConfig, exec: Exec) -> Result<StabilityReport> {
    if !matches!(cfg.noise, NoiseModel::Uniform { .. }) {
        return Err(Error::InvalidParameter("deterministic bounds need uniform noise".into()));
    }
    let (records, violations, max_dev) = run_trials(&cfg, exec)?;
    Ok(StabilityReport {
        config: cfg,
        records,
        max_dev,
        violations,
        tail: Vec::new(),
        expectation: None,
    })
}

pub fn run_deterministic_check(cfg: StabilityConfig, exec: Exec) -> Result<StabilityReport> {
    let report = deterministic_report(cfg, exec)?;
    report.ensure()?;
    Ok(report)
}

/// `2 exp(-MS τ² / (2 α² σ²))`.
pub fn tail_bound(tau: f64, ms: usize, alpha: f64, sigma: f64) -> f64 {
    2.0 * (-(ms as f64) * tau * tau / (2.0 * alpha * alpha * sigma * sigma)).exp()
}

/// `α σ √(2/π)`.
pub fn gaussian_expectation_bound(alpha: f64, sigma: f64) -> f64 {
    alpha * sigma * (2.0 / std::f64::consts::PI).sqrt()
}

/// Tail frequencies under Gaussian noise, without failing on exceedance.
pub fn subgaussian_report(cfg: StabilityConfig, tau_grid: &[f64], exec: Exec) -> Result<StabilityReport> {
    let sigma = match cfg.noise {
        NoiseModel::Gaussian { sigma } => sigma,
        _ => return Err(Error::InvalidParameter("tail bound needs Gaussian noise".into())),
    };
    let (records, violations, max_dev) = run_trials(&cfg, exec)?;
    let pairs = (cfg.channels * (cfg.channels - 1) / 2) as f64;
    let n = records.len() as f64;
    let tail = tau_grid
        .iter()
        .map(|&tau| {
            let bound = tail_bound(tau, cfg.ms, cfg.alpha, sigma);
            let hits: f64 = records
                .iter()
                .map(|r| r.deviations.iter().filter(|d| d.abs() >= tau).count() as f64 / pairs)
                .sum();
            let empirical = hits / n;
            let p = bound.min(1.0);
            // pairs within a trial are dependent, so the trial count is the sample size
            let std_err = (p * (1.0 - p) / n).sqrt();
            TailRow {
                tau,
                bound,
                empirical,
                std_err,
                violation: empirical > bound + 3.0 * std_err,
            }
        })
        .collect();
    Ok(StabilityReport {
        config: cfg,
        records,
        max_dev,
        violations,
        tail,
        expectation: None,
    })
}

pub fn run_subgaussian_check(cfg: StabilityConfig, tau_grid: &[f64], exec: Exec) -> Result<StabilityReport> {
    let report = subgaussian_report(cfg, tau_grid, exec)?;
    report.ensure()?;
    Ok(report)
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

/// Expectation bounds under Gaussian noise, without failing on exceedance.
pub fn gaussian_expectation_report(cfg: StabilityConfig, exec: Exec) -> Result<StabilityReport> {
    let sigma = match cfg.noise {
        NoiseModel::Gaussian { sigma } => sigma,
        _ => return Err(Error::InvalidParameter("expectation bound needs Gaussian noise".into())),
    };
    let (records, violations, max_dev) = run_trials(&cfg, exec)?;
    let bound = gaussian_expectation_bound(cfg.alpha, sigma);
    let (entry_mean, entry_se) = mean_se(records.iter().map(|r| r.mean_abs_dev));
    let (frob_mean, frob_se) = mean_se(records.iter().map(|r| r.frob_dev));
    let frob_bound = bound * ((cfg.channels * (cfg.channels - 1)) as f64).sqrt();
    let violation = entry_mean > bound + 3.0 * entry_se || frob_mean > frob_bound + 3.0 * frob_se;
    Ok(StabilityReport {
        config: cfg,
        records,
        max_dev,
        violations,
        tail: Vec::new(),
        expectation: Some(ExpectationSummary {
            entry_mean,
            entry_se,
            entry_bound: bound,
            frob_mean,
            frob_se,
            frob_bound,
            violation,
        }),
    })
}

pub fn run_gaussian_expectation_check(cfg: StabilityConfig, exec: Exec) -> Result<StabilityReport> {
    let report = gaussian_expectation_report(cfg, exec)?;
    report.ensure()?;
    Ok(report)
}

/// `k α σ / √MS` for `k = 0..points`, spanning the informative part of the tail bound.
pub fn default_tau_grid(alpha: f64, sigma: f64, ms: usize, points: usize) -> Vec<f64> {
    let unit = alpha * sigma / (ms as f64).sqrt();
    (0..points).map(|k| unit * k as f64 * 0.5).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(noise: NoiseModel, ms: usize, trials: usize) -> StabilityConfig {
        StabilityConfig {
            channels: 4,
            alpha: 1.0,
            noise,
            ms,
            trials,
            seed: 17,
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        let r = run_deterministic_check(cfg(NoiseModel::Uniform { eps_inf: 0.0 }, 8, 20), Exec::Sequential).unwrap();
        assert_eq!(r.max_dev, 0.0);
    }

    #[test]
    fn bounded_noise_respects_bound() {
        let r = run_deterministic_check(cfg(NoiseModel::Uniform { eps_inf: 0.1 }, 16, 1000), Exec::Parallel).unwrap();
        assert!(r.max_dev <= 0.1);
        assert!(r.max_dev > 0.0);
    }

    #[test]
    fn tail_bound_formula() {
        assert_eq!(tail_bound(0.0, 128, 1.0, 0.1), 2.0);
        let b = tail_bound(0.05, 128, 1.0, 0.1);
        assert!((b - 2.0 * (-16.0f64).exp()).abs() < 1e-20);
    }

    #[test]
    fn vacuous_tau_is_fine() {
        let r = run_subgaussian_check(cfg(NoiseModel::Gaussian { sigma: 0.1 }, 16, 200), &[0.0], Exec::Parallel).unwrap();
        assert!(r.tail[0].empirical <= 1.0);
    }

    #[test]
    fn report_is_reproducible() {
        let c = cfg(NoiseModel::Gaussian { sigma: 0.2 }, 4, 50);
        let a = gaussian_expectation_report(c, Exec::Parallel).unwrap();
        let b = gaussian_expectation_report(c, Exec::Sequential).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
