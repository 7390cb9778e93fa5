//! Computable upper bound on `KL(q ‖ p_r)` for a renewal prior `p_r`.
//!
//! With `m = -e^{-t}` the KL integral over `t ∈ [0, S]` becomes an initial
//! value problem `G'(m) = g(m)`, `G(-1) = 0`, on `m ∈ [-1, -e^{-S}]`, where
//!
//! ```text
//! g(m) = -(q(M) / m) · ln[ q(M) / p_r(M) ],   M = -ln(-m).
//! ```
//!
//! `q` vanishes beyond `S`, so `G` is constant on `[-e^{-S}, 0)`. The bound
//! reads `U_ε = G(-ε) + |G(-2ε) - G(-ε)|`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dlif::{gated_time, refractory_gate, RateFunction, Table};
use crate::melp::{lognormal_pdf_ln, LognormalMixture, MixtureVars};
use crate::numerics::{normal_cdf, normal_pdf, quad_adaptive, rk4_scalar_mesh, Tape, Var};
use crate::{Error, Result};

/// Tail parameter used by the training objective.
pub const TRAIN_EPS: f64 = 1e-3;
pub const TRAIN_ODE_STEPS: usize = 1024;

/// Untruncated shape of `q`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum QFamily {
    Exponential {
        rate: f64,
    },
    Lognormal {
        mu: f64,
        s: f64,
    },
    Mixture(LognormalMixture),
    /// The prior's own renewal density.
    Prior,
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for QFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QFamily::Exponential { rate } => write!(f, "Exponential({rate})"),
            QFamily::Lognormal { mu, s } => write!(f, "Lognormal({mu}, {s})"),
            QFamily::Mixture(m) => write!(f, "Mixture(K={})", m.k()),
            QFamily::Prior => write!(f, "Prior"),
            QFamily::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Density `q` truncated and renormalised to `[0, S]`, the prior rate and
/// the tail parameter.
#[derive(Debug, Clone)]
pub struct KlProblem {
    family: QFamily,
    rate: RateFunction,
    horizon: f64,
    eps: f64,
    norm: f64,
}

impl KlProblem {
    pub fn new(family: QFamily, rate: RateFunction, horizon: f64, eps: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be finite and positive, got {horizon}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("tail parameter must lie in (0, 1), got {eps}")));
        }
        let mut p = Self {
            family,
            rate,
            horizon,
            eps,
            norm: 1.0,
        };
        p.norm = match &p.family {
            QFamily::Exponential { rate } => -(-rate * horizon).exp_m1(),
            QFamily::Lognormal { mu, s } => normal_cdf((horizon.ln() - mu) / s),
            QFamily::Mixture(m) => m.cdf(horizon),
            QFamily::Prior => 1.0 - (-p.rate.cumulative_hazard(horizon)?).exp(),
            QFamily::Custom(f) => quad_adaptive(|t| f(t), 0.0, horizon, 1e-12)?,
        };
        if !(p.norm > 0.0 && p.norm.is_finite()) {
            return Err(Error::Domain(format!("q has no mass on [0, {horizon}]")));
        }
        Ok(p)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn rate(&self) -> &RateFunction {
        &self.rate
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("tail parameter must lie in (0, 1), got {eps}")));
        }
        Ok(Self { eps, ..self.clone() })
    }

    /// Truncated, renormalised `q(t)`.
    pub fn q(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Ok(0.0);
        }
        let raw = match &self.family {
            QFamily::Exponential { rate } => rate * (-rate * t).exp(),
            QFamily::Lognormal { mu, s } => {
                if t == 0.0 {
                    0.0
                } else {
                    lognormal_pdf_ln(t.ln(), *mu, *s)
                }
            }
            QFamily::Mixture(m) => {
                if t == 0.0 {
                    0.0
                } else {
                    m.density_unchecked(t)
                }
            }
            QFamily::Prior => self.rate.renewal_density(t)?,
            QFamily::Custom(f) => f(t),
        };
        Ok(raw / self.norm)
    }

    /// Prior renewal density `p_r(t)`.
    pub fn p(&self, t: f64) -> Result<f64> {
        self.rate.renewal_density(t)
    }

    /// `q ln(q / p)` at `t`, zero where `q` vanishes.
    fn kl_density(&self, t: f64) -> Result<f64> {
        let q = self.q(t)?;
        if q <= 0.0 {
            return Ok(0.0);
        }
        let p = self.p(t)?;
        let v = q * (q.ln() - p.ln());
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { at: t });
        }
        Ok(v)
    }
}

/// Change-of-variables integrand on `m ∈ [-1, 0)`.
pub fn kl_integrand_g(m: f64, problem: &KlProblem) -> Result<f64> {
    if !(-1.0..0.0).contains(&m) {
        return Err(Error::OutOfDomain(m));
    }
    let big_m = -(-m).ln();
    if big_m > problem.horizon {
        return Ok(0.0);
    }
    Ok(-problem.kl_density(big_m)? / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBound {
    pub u_eps: f64,
    pub g_eps: f64,
    pub g_2eps: f64,
    pub tail: f64,
}

/// Evaluation points `(a, b)` for `G(-2ε)` and `G(-ε)`, clipped to where
/// `G` changes.
fn bound_points(horizon: f64, eps: f64) -> (f64, f64) {
    let m_s = -(-horizon).exp();
    let b = (-eps).min(m_s);
    let a = (-2.0 * eps).min(m_s).max(-1.0);
    (a, b)
}

/// Meshes for `[-1, a]` and `[a, b]` with nodes evenly spaced in
/// `t = -ln(-m)`, so steps shrink toward the singular end; `steps` is
/// shared in proportion to each segment's length in `t`.
fn graded_meshes(a: f64, b: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let to_t = |m: f64| -(-m).ln();
    let (ta, tb) = (to_t(a), to_t(b));
    let steps = steps.max(2);
    let (n1, n2) = if tb <= ta {
        (steps, 0)
    } else if ta <= 0.0 {
        (0, steps)
    } else {
        let n1 = ((steps as f64) * ta / tb).round() as usize;
        let n1 = n1.clamp(1, steps - 1);
        (n1, steps - n1)
    };
    let mesh = |t0: f64, t1: f64, m0: f64, m1: f64, n: usize| -> Vec<f64> {
        if n == 0 {
            return Vec::new();
        }
        // endpoints pinned so segments meet exactly
        (0..=n)
            .map(|i| match i {
                0 => m0,
                i if i == n => m1,
                i => -(-(t0 + (t1 - t0) * i as f64 / n as f64)).exp(),
            })
            .collect()
    };
    (mesh(0.0, ta, -1.0, a, n1), mesh(ta, tb, a, b, n2))
}

/// `U_ε` by classical RK4 on `G' = g`.
pub fn kl_bound(problem: &KlProblem, ode_steps: usize) -> Result<KlBound> {
    if ode_steps == 0 {
        return Err(Error::InvalidParameter("need at least one ODE step".into()));
    }
    let (a, b) = bound_points(problem.horizon, problem.eps);
    let (mesh1, mesh2) = graded_meshes(a, b, ode_steps);
    // RK4 callbacks cannot return errors, so the first failure is parked here
    let failure = std::cell::RefCell::new(None);
    let g = |m: f64, _: f64| match kl_integrand_g(m, problem) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let run = |mesh: &[f64], y0: f64| if mesh.is_empty() { Ok(y0) } else { rk4_scalar_mesh(g, mesh, y0) };
    let g_b = run(&mesh1, 0.0).and_then(|ga| run(&mesh2, ga).map(|gb| (ga, gb)));
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let (g_2eps, g_eps) = g_b?;
    let tail = (g_2eps - g_eps).abs();
    Ok(KlBound {
        u_eps: g_eps + tail,
        g_eps,
        g_2eps,
        tail,
    })
}

/// Direct quadrature of the KL integral in `t`; a test oracle only.
pub fn kl_oracle(problem: &KlProblem, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let failure = std::cell::RefCell::new(None);
    let v = quad_adaptive(
        |t| match problem.kl_density(t) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        problem.horizon,
        tol,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    v
}

/// Simpson node weights equivalent to RK4 on `G' = g(m)` over `[x0, x1]`.
fn simpson_nodes(mesh: &[f64], out: &mut Vec<(f64, f64)>) {
    for w in mesh.windows(2) {
        let h = w[1] - w[0];
        out.push((w[0], h / 6.0));
        out.push((w[0] + 0.5 * h, 4.0 * h / 6.0));
        out.push((w[1], h / 6.0));
    }
}

/// Renewal prior with constant base rate and optional refractory gate, as
/// used inside the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantPrior {
    pub refractory: Option<f64>,
}

/// `U_ε` for a mixture `q` truncated to `[0, horizon]` against a constant
/// gated rate, recorded as one tape node with analytic gradients in the
/// mixture weights, log-means, scales and the rate.
pub fn kl_bound_tape(
    tape: &mut Tape,
    mix: &MixtureVars,
    rate: Var,
    prior: ConstantPrior,
    horizon: f64,
    eps: f64,
    ode_steps: usize,
) -> Result<Var> {
    let w = tape.value(mix.weights).to_vec();
    let mu = tape.value(mix.mu).to_vec();
    let s = tape.value(mix.s).to_vec();
    let r = tape.scalar(rate);
    let k = w.len();
    if !(r > 0.0) || s.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("KL bound needs positive rate and scales, got r = {r}")));
    }

    // the two-segment RK4 sum folded into node weights; the |·| tail term
    // doubles the second segment when it is positive and cancels it otherwise
    let (a, b) = bound_points(horizon, eps);
    let (mesh1, mesh2) = graded_meshes(a, b, ode_steps);
    let mut seg1 = Vec::with_capacity(3 * mesh1.len());
    let mut seg2 = Vec::with_capacity(3 * mesh2.len());
    simpson_nodes(&mesh1, &mut seg1);
    simpson_nodes(&mesh2, &mut seg2);

    let ln_s = horizon.ln();
    let zeta: Vec<f64> = (0..k).map(|j| (ln_s - mu[j]) / s[j]).collect();
    let norm: f64 = (0..k).map(|j| w[j] * normal_cdf(zeta[j])).sum();
    if !(norm > 1e-300) {
        return Err(Error::Domain("mixture has no mass inside the KL horizon".into()));
    }
    let dz_dw: Vec<f64> = zeta.iter().map(|z| normal_cdf(*z)).collect();
    let dz_dmu: Vec<f64> = (0..k).map(|j| -w[j] * normal_pdf(zeta[j]) / s[j]).collect();
    let dz_ds: Vec<f64> = (0..k).map(|j| -w[j] * normal_pdf(zeta[j]) * zeta[j] / s[j]).collect();

    struct Acc {
        value: f64,
        gw: Vec<f64>,
        gmu: Vec<f64>,
        gs: Vec<f64>,
        gr: f64,
    }
    let eval = |nodes: &[(f64, f64)]| -> Acc {
        let mut acc = Acc {
            value: 0.0,
            gw: vec![0.0; k],
            gmu: vec![0.0; k],
            gs: vec![0.0; k],
            gr: 0.0,
        };
        let mut phi = vec![0.0; k];
        let mut z = vec![0.0; k];
        for &(m, c) in nodes {
            let big_m = -(-m).ln();
            if !(big_m > 0.0) || big_m > horizon {
                continue;
            }
            let lm = big_m.ln();
            let mut f = 0.0;
            for j in 0..k {
                z[j] = (lm - mu[j]) / s[j];
                phi[j] = lognormal_pdf_ln(lm, mu[j], s[j]);
                f += w[j] * phi[j];
            }
            let q = f / norm;
            if !(q > 0.0) {
                continue;
            }
            let (gate, gated_t) = match prior.refractory {
                Some(rho) => (refractory_gate(big_m, 0.0, rho), gated_time(big_m, rho)),
                None => (1.0, big_m),
            };
            let ln_p = (r * gate).ln() - r * gated_t;
            let log_ratio = q.ln() - ln_p;
            // g = -(1/m) q (ln q - ln p); c already carries the node weight
            let cm = -c / m;
            acc.value += cm * q * log_ratio;
            let dq_coeff = cm * (log_ratio + 1.0);
            for j in 0..k {
                let df_dw = phi[j];
                let df_dmu = w[j] * phi[j] * z[j] / s[j];
                let df_ds = w[j] * phi[j] * (z[j] * z[j] - 1.0) / s[j];
                acc.gw[j] += dq_coeff * (df_dw - q * dz_dw[j]) / norm;
                acc.gmu[j] += dq_coeff * (df_dmu - q * dz_dmu[j]) / norm;
                acc.gs[j] += dq_coeff * (df_ds - q * dz_ds[j]) / norm;
            }
            acc.gr -= cm * q * (1.0 / r - gated_t);
        }
        acc
    };
    let s1 = eval(&seg1);
    let s2 = eval(&seg2);
    let factor2 = if s2.value > 0.0 { 2.0 } else { 0.0 };
    let value = s1.value + factor2 * s2.value;
    if !value.is_finite() {
        return Err(Error::NonFiniteIntegrand { at: horizon });
    }
    let comb = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + factor2 * y).collect() };
    Ok(tape.custom(
        value,
        vec![
            (mix.weights, comb(&s1.gw, &s2.gw)),
            (mix.mu, comb(&s1.gmu, &s2.gmu)),
            (mix.s, comb(&s1.gs, &s2.gs)),
            (rate, vec![s1.gr + factor2 * s2.gr]),
        ],
    ))
}

/// Random `(q, r)` pairs on `[0, S]`: exponential, lognormal and mixture
/// shapes against constant or tabulated prior rates.
pub fn random_battery(n: usize, horizon: f64, eps: f64, seed: u64) -> Result<Vec<KlProblem>> {
    let root = crate::numerics::Rng::new(seed);
    (0..n)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let family = match i % 3 {
                0 => QFamily::Exponential {
                    rate: rng.uniform_in(0.5, 5.0),
                },
                1 => QFamily::Lognormal {
                    mu: rng.uniform_in(-1.5, 0.5),
                    s: rng.uniform_in(0.3, 1.2),
                },
                _ => {
                    let k = 2 + rng.below(2);
                    let raw: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.2, 1.0)).collect();
                    let total: f64 = raw.iter().sum();
                    let tau = (0..k).map(|_| rng.uniform_in(0.1, 2.0)).collect();
                    let s = (0..k).map(|_| rng.uniform_in(0.3, 1.0)).collect();
                    QFamily::Mixture(LognormalMixture::new(raw.iter().map(|w| w / total).collect(), tau, s)?)
                }
            };
            let rate = if (i / 3) % 2 == 0 {
                RateFunction::constant(rng.uniform_in(0.5, 5.0))?
            } else {
                let knots = 6;
                let ts = (0..knots).map(|j| horizon * j as f64 / (knots - 1) as f64).collect();
                let vs = (0..knots).map(|_| rng.uniform_in(0.5, 5.0)).collect();
                RateFunction::tabulated(Table::new(ts, vs)?)?
            };
            KlProblem::new(family, rate, horizon, eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_problem(q_rate: f64, r: f64, eps: f64) -> KlProblem {
        KlProblem::new(
            QFamily::Exponential { rate: q_rate },
            RateFunction::constant(r).unwrap(),
            10.0,
            eps,
        )
        .unwrap()
    }

    #[test]
    fn integrand_at_unit_time() {
        let p = exp_problem(1.0, 1.0, 1e-5);
        let g = kl_integrand_g(-(-1.0f64).exp(), &p).unwrap();
        let z = 1.0 - (-10.0f64).exp();
        let expect = (1.0 / z) * (1.0 / z).ln();
        assert!((g - expect).abs() < 1e-15, "{g} vs {expect}");
        assert!((g - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn integrand_domain() {
        let p = exp_problem(2.0, 1.0, 1e-5);
        assert!(matches!(kl_integrand_g(0.0, &p), Err(Error::OutOfDomain(_))));
        assert!(matches!(kl_integrand_g(-1.5, &p), Err(Error::OutOfDomain(_))));
        assert!(kl_integrand_g(-(-10.0f64).exp(), &p).unwrap().is_finite());
        assert_eq!(kl_integrand_g(-1e-6, &p).unwrap(), 0.0);
    }

    #[test]
    fn oracle_closed_forms() {
        let v = kl_oracle(&exp_problem(2.0, 1.0, 1e-5), 1e-12).unwrap();
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-6, "{v}");
        // truncation at S = 10 shifts this pair by about 4e-4: the exact value is
        // -ln Z - ln 2 + E[t | t <= 10] with Z = 1 - e^{-10}
        let v = kl_oracle(&exp_problem(1.0, 2.0, 1e-5), 1e-12).unwrap();
        let z = -(-10.0f64).exp_m1();
        let mean = (1.0 - 11.0 * (-10.0f64).exp()) / z;
        assert!((v - (-z.ln() - 2f64.ln() + mean)).abs() < 1e-9, "{v}");
        assert!((v - (0.5f64.ln() + 1.0)).abs() < 5e-4);
    }

    #[test]
    fn bound_on_exponential_pair() {
        let b = kl_bound(&exp_problem(2.0, 1.0, 1e-5), 4096).unwrap();
        assert!((b.u_eps - 0.193_147).abs() < 1e-3, "{b:?}");
    }

    #[test]
    fn self_divergence_is_tight() {
        let r = RateFunction::constant(2.0).unwrap();
        let p = KlProblem::new(QFamily::Prior, r, 10.0, 1e-4).unwrap();
        let b = kl_bound(&p, 2048).unwrap();
        assert!(b.u_eps >= 0.0 && b.u_eps <= 5e-4, "{b:?}");
        // renormalising onto [0, S] leaves exactly -ln Z
        let oracle = kl_oracle(&p, 1e-13).unwrap();
        assert!(oracle.abs() < 1e-8, "{oracle}");
        assert!((oracle + (-(-20.0f64).exp()).ln_1p()).abs() < 1e-12);
    }

    #[test]
    fn tape_bound_matches_direct_route() {
        let mix = LognormalMixture::new(vec![0.2, 0.5, 0.3], vec![0.08, 0.12, 0.3], vec![0.4, 0.6, 0.5]).unwrap();
        let rate = RateFunction::constant(9.0).unwrap().with_refractory(0.01).unwrap();
        let problem = KlProblem::new(QFamily::Mixture(mix.clone()), rate, 5.0, 1e-3).unwrap();
        let direct = kl_bound(&problem, 1024).unwrap();

        let mut tape = Tape::new();
        let logits = tape.leaf_vec(mix.weights().iter().map(|w| w.ln()).collect());
        let tau = tape.leaf_vec(mix.tau_tilde().to_vec());
        let s = tape.leaf_vec(mix.scales().to_vec());
        let mv = MixtureVars::from_tau(&mut tape, logits, tau, s);
        let r = tape.leaf_scalar(9.0);
        let prior = ConstantPrior { refractory: Some(0.01) };
        let u = kl_bound_tape(&mut tape, &mv, r, prior, 5.0, 1e-3, 1024).unwrap();
        assert!((tape.scalar(u) - direct.u_eps).abs() < 1e-9 * direct.u_eps.max(1.0), "{} vs {direct:?}", tape.scalar(u));
    }
}
