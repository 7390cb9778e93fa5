//! Leaky integrate-and-fire renewal prior.
//!
//! A drive `b(t) > 1` maps to the firing rate `r = 1 / -ln(1 - 1/b)`, and the
//! rate is the hazard of a renewal process whose inter-event density is
//! `p(t) = r(t) exp(-∫₀ᵗ r)`. A refractory gate `1 - exp(-Δ/ρ)` suppresses the
//! hazard right after an event.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::epde::EventRealization;
use crate::erg::last_event_before;
use crate::numerics::{quad_adaptive, softplus, Rng};
use crate::{Error, Result};

/// Smallest gate value; keeps the gate inside `(0, 1]` at `Δ = 0`.
pub const GATE_FLOOR: f64 = 1e-6;

/// Default plausible rate range in Hz.
pub const DEFAULT_RATE_BOUNDS: (f64, f64) = (0.5, 40.0);

const CUMULATIVE_TOL: f64 = 1e-10;

/// Piecewise-linear curve with constant extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    ts: Vec<f64>,
    vs: Vec<f64>,
}

impl Table {
    pub fn new(ts: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        if ts.is_empty() || ts.len() != vs.len() {
            return Err(Error::InvalidParameter(format!(
                "table needs matching non-empty columns, got {} times and {} values",
                ts.len(),
                vs.len()
            )));
        }
        if ts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("table times must be strictly increasing".into()));
        }
        if ts.iter().chain(&vs).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("table entries must be finite".into()));
        }
        Ok(Self { ts, vs })
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn values(&self) -> &[f64] {
        &self.vs
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return self.vs[0];
        }
        if t >= self.ts[n - 1] {
            return self.vs[n - 1];
        }
        let k = self.ts.partition_point(|x| *x <= t) - 1;
        let w = (t - self.ts[k]) / (self.ts[k + 1] - self.ts[k]);
        self.vs[k] + w * (self.vs[k + 1] - self.vs[k])
    }

    /// Exact `∫₀ᵗ` of the interpolant.
    pub fn integral_to(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut prev = 0.0;
        let mut prev_v = self.eval(0.0);
        for (&tk, &vk) in self.ts.iter().zip(&self.vs) {
            if tk <= 0.0 {
                continue;
            }
            if tk >= t {
                break;
            }
            acc += 0.5 * (prev_v + vk) * (tk - prev);
            prev = tk;
            prev_v = vk;
        }
        acc + 0.5 * (prev_v + self.eval(t)) * (t - prev)
    }

    fn min(&self) -> f64 {
        self.vs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn max(&self) -> f64 {
        self.vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Effective input drive `b(t)`, always greater than one.
#[derive(Clone)]
pub enum DriveFunction {
    Constant(f64),
    Tabulated(Table),
    /// `1 + softplus(g(t))` for a learned scalar map `g`.
    Learned(ScalarFn),
}

impl fmt::Debug for DriveFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriveFunction::Constant(b) => write!(f, "Constant({b})"),
            DriveFunction::Tabulated(t) => write!(f, "Tabulated({} knots)", t.ts.len()),
            DriveFunction::Learned(_) => write!(f, "Learned(..)"),
        }
    }
}

impl DriveFunction {
    pub fn constant(b: f64) -> Result<Self> {
        if !(b > 1.0) {
            return Err(Error::InvalidDrive(b));
        }
        Ok(DriveFunction::Constant(b))
    }

    pub fn tabulated(table: Table) -> Result<Self> {
        if let Some(b) = table.vs.iter().find(|b| !(**b > 1.0)) {
            return Err(Error::InvalidDrive(*b));
        }
        Ok(DriveFunction::Tabulated(table))
    }

    pub fn learned(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DriveFunction::Learned(Arc::new(g))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DriveFunction::Constant(b) => *b,
            DriveFunction::Tabulated(table) => table.eval(t),
            DriveFunction::Learned(g) => 1.0 + softplus(g(t)),
        }
    }
}

/// Firing rate implied by a constant drive `b > 1`.
pub fn drive_to_rate(b: f64) -> Result<f64> {
    if !(b > 1.0) || !b.is_finite() {
        return Err(Error::InvalidDrive(b));
    }
    // -ln(1 - 1/b) written with ln_1p for accuracy as b grows
    Ok(1.0 / -(-1.0 / b).ln_1p())
}

/// Drive that produces the given rate; inverse of [`drive_to_rate`].
pub fn rate_to_drive(r: f64) -> f64 {
    1.0 / -(-1.0 / r).exp_m1()
}

/// Refractory recovery `1 - exp(-(t - t_last)/ρ)`, floored at [`GATE_FLOOR`].
pub fn refractory_gate(t: f64, t_last: f64, rho: f64) -> f64 {
    let dt = (t - t_last).max(0.0);
    (-(-dt / rho).exp_m1()).max(GATE_FLOOR)
}

/// `∫₀ᵘ (1 - e^{-v/ρ}) dv`.
pub fn gated_time(u: f64, rho: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    u + rho * (-u / rho).exp_m1()
}

#[derive(Clone)]
enum RateKind {
    Constant(f64),
    Tabulated(Table),
    Drive(DriveFunction),
    Custom(ScalarFn),
}

/// Bounded positive hazard `r(t)`. Evaluations are clamped to the bounds so
/// `lo <= r(t) <= hi` holds everywhere.
#[derive(Clone)]
pub struct RateFunction {
    kind: RateKind,
    lo: f64,
    hi: f64,
    refractory: Option<f64>,
}

impl fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            RateKind::Constant(r) => format!("Constant({r})"),
            RateKind::Tabulated(t) => format!("Tabulated({} knots)", t.ts.len()),
            RateKind::Drive(d) => format!("Drive({d:?})"),
            RateKind::Custom(_) => "Custom(..)".into(),
        };
        f.debug_struct("RateFunction")
            .field("kind", &kind)
            .field("bounds", &(self.lo, self.hi))
            .field("refractory", &self.refractory)
            .finish()
    }
}

fn check_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi) || lo.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "rate bounds need 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

impl RateFunction {
    pub fn constant(r: f64) -> Result<Self> {
        check_bounds(r, r)?;
        if !r.is_finite() {
            return Err(Error::UnboundedRate);
        }
        Ok(Self {
            kind: RateKind::Constant(r),
            lo: r,
            hi: r,
            refractory: None,
        })
    }

    pub fn tabulated(table: Table) -> Result<Self> {
        let (lo, hi) = (table.min(), table.max());
        check_bounds(lo, hi)?;
        Ok(Self {
            kind: RateKind::Tabulated(table),
            lo,
            hi,
            refractory: None,
        })
    }

    /// Rate driven by `b(t)` through [`drive_to_rate`], clamped to `bounds`.
    pub fn from_drive(drive: DriveFunction, bounds: (f64, f64)) -> Result<Self> {
        check_bounds(bounds.0, bounds.1)?;
        Ok(Self {
            kind: RateKind::Drive(drive),
            lo: bounds.0,
            hi: bounds.1,
            refractory: None,
        })
    }

    /// Arbitrary evaluator clamped to `bounds`. An infinite upper bound is
    /// allowed here; sampling then fails with [`Error::UnboundedRate`].
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static, bounds: (f64, f64)) -> Result<Self> {
        check_bounds(bounds.0, bounds.1)?;
        Ok(Self {
            kind: RateKind::Custom(Arc::new(f)),
            lo: bounds.0,
            hi: bounds.1,
            refractory: None,
        })
    }

    /// Adds a refractory gate with recovery constant `rho` seconds.
    pub fn with_refractory(mut self, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!("refractory constant must be positive, got {rho}")));
        }
        self.refractory = Some(rho);
        Ok(self)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn refractory(&self) -> Option<f64> {
        self.refractory
    }

    pub fn as_table(&self) -> Option<&Table> {
        match &self.kind {
            RateKind::Tabulated(t) => Some(t),
            _ => None,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match &self.kind {
            RateKind::Constant(r) => Some(*r),
            _ => None,
        }
    }

    /// Ungated rate at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let raw = match &self.kind {
            RateKind::Constant(r) => return *r,
            RateKind::Tabulated(table) => return table.eval(t),
            RateKind::Drive(d) => drive_to_rate(d.eval(t)).unwrap_or(self.lo),
            RateKind::Custom(f) => f(t),
        };
        if raw.is_nan() {
            self.lo
        } else {
            raw.clamp(self.lo, self.hi)
        }
    }

    /// Rate after refractory gating relative to the last event at `t_last`.
    pub fn gated(&self, t: f64, t_last: f64) -> f64 {
        match self.refractory {
            Some(rho) => refractory_gate(t, t_last, rho) * self.eval(t),
            None => self.eval(t),
        }
    }

    /// `∫₀ᵗ r(u) du`, exact for constant and tabulated rates.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        match &self.kind {
            RateKind::Constant(r) => Ok(r * t),
            RateKind::Tabulated(table) => Ok(table.integral_to(t)),
            _ => quad_adaptive(|u| self.eval(u), 0.0, t, CUMULATIVE_TOL * t.max(1.0)),
        }
    }

    /// Renewal hazard at time `u` since the previous event, gated if a
    /// refractory constant is set.
    pub fn hazard(&self, u: f64) -> f64 {
        self.gated(u, 0.0)
    }

    /// `∫₀ᵘ hazard`. Closed form for a gated constant rate:
    /// `r (u - ρ (1 - e^{-u/ρ}))`.
    pub fn cumulative_hazard(&self, u: f64) -> Result<f64> {
        match (self.refractory, &self.kind) {
            (None, _) => self.cumulative(u),
            (Some(_), _) if u <= 0.0 => Ok(0.0),
            (Some(rho), RateKind::Constant(r)) => Ok(r * gated_time(u, rho)),
            (Some(_), _) => quad_adaptive(|v| self.hazard(v), 0.0, u, CUMULATIVE_TOL * u.max(1.0)),
        }
    }

    /// Inter-event density `h(u) exp(-∫₀ᵘ h)` of the renewal prior.
    pub fn renewal_density(&self, u: f64) -> Result<f64> {
        if u < 0.0 {
            return Ok(0.0);
        }
        Ok(self.hazard(u) * (-self.cumulative_hazard(u)?).exp())
    }

    /// Serialises a tabulated rate as `t,r` CSV.
    pub fn to_csv(&self) -> Option<String> {
        let table = self.as_table()?;
        let mut out = String::from("t,r\n");
        for (t, r) in table.ts.iter().zip(&table.vs) {
            out.push_str(&format!("{t},{r}\n"));
        }
        Some(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut ts = Vec::new();
        let mut rs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.parse().ok()).ok_or_else(|| {
                    Error::InvalidParameter(format!("rate CSV line {}: expected `t,r`", lineno + 1))
                })
            };
            ts.push(parse(cols.next())?);
            rs.push(parse(cols.next())?);
        }
        RateFunction::tabulated(Table::new(ts, rs)?)
    }
}

/// Renewal density `r(t) exp(-∫₀ᵗ r)`.
pub fn dlif_density(r: &RateFunction, t: f64, tol: f64) -> Result<f64> {
    if t < 0.0 {
        return Ok(0.0);
    }
    let cum = match r.kind {
        RateKind::Constant(_) | RateKind::Tabulated(_) => r.cumulative(t)?,
        _ => {
            if t == 0.0 {
                0.0
            } else {
                quad_adaptive(|u| r.eval(u), 0.0, t, tol)?
            }
        }
    };
    Ok(r.eval(t) * (-cum).exp())
}

/// Samples a renewal realization on `[0, horizon]` by thinning against the
/// constant majorant `hi`. The hazard is evaluated at the time elapsed since
/// the previous event (or since 0), gated if the rate carries a refractory
/// constant.
pub fn sample_renewal(r: &RateFunction, horizon: f64, rng: &mut Rng) -> Result<EventRealization> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let majorant = r.hi;
    if !majorant.is_finite() {
        return Err(Error::UnboundedRate);
    }
    let mut events = Vec::new();
    let mut last = 0.0;
    let mut t = 0.0;
    loop {
        t += rng.exponential(majorant);
        if t > horizon {
            break;
        }
        let elapsed = t - last;
        let hazard = match r.refractory {
            Some(rho) => refractory_gate(elapsed, 0.0, rho) * r.eval(elapsed),
            None => r.eval(elapsed),
        };
        if rng.uniform() * majorant < hazard {
            // guard against ties from floating point accumulation
            if t > last || events.is_empty() {
                events.push(t);
                last = t;
            }
        }
    }
    Ok(EventRealization::single(events, rng.seed()))
}

/// Trapezoidal `∫₀ˢ (r̂(t) - r̃(t))² dt` on `grid` equally spaced points.
pub fn lif_consistency<F, G>(r_hat: F, r_tilde: G, horizon: f64, grid: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if grid < 2 {
        return Err(Error::InvalidParameter(format!("consistency grid needs >= 2 points, got {grid}")));
    }
    let h = horizon / (grid - 1) as f64;
    let sq = |k: usize| {
        let t = h * k as f64;
        let d = r_hat(t) - r_tilde(t);
        d * d
    };
    let inner: f64 = (1..grid - 1).map(sq).sum();
    Ok(h * (inner + 0.5 * (sq(0) + sq(grid - 1))))
}

/// Gated rate `α(t) r(t)` along one channel of a realization.
pub fn gated_rate_along(r: &RateFunction, events: &[f64], t: f64) -> f64 {
    r.gated(t, last_event_before(events, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drive_inverts_unit_rate() {
        let b = 1.0 / (1.0 - (-1.0f64).exp());
        assert!((drive_to_rate(b).unwrap() - 1.0).abs() < 1e-12);
        assert!((rate_to_drive(1.0) - b).abs() < 1e-12);
    }

    #[test]
    fn drive_near_one_gives_small_rate() {
        let r = drive_to_rate(1.0001).unwrap();
        assert!(r > 0.0 && r < 0.11, "r = {r}");
    }

    #[test]
    fn drive_two() {
        assert!((drive_to_rate(2.0).unwrap() - 1.0 / 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_drive() {
        assert!(matches!(drive_to_rate(1.0), Err(Error::InvalidDrive(_))));
        assert!(matches!(drive_to_rate(0.3), Err(Error::InvalidDrive(_))));
        assert!(DriveFunction::constant(0.9).is_err());
    }

    #[test]
    fn gate_values() {
        assert_eq!(refractory_gate(1.0, 1.0, 0.1), GATE_FLOOR);
        assert!((refractory_gate(0.1, 0.0, 0.1) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((refractory_gate(2.0, 0.0, 0.1) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_density_is_exponential() {
        let r = RateFunction::constant(2.0).unwrap();
        assert_eq!(dlif_density(&r, 0.0, 1e-10).unwrap(), 2.0);
        let d = dlif_density(&r, 0.5, 1e-10).unwrap();
        assert!((d - 2.0 * (-1.0f64).exp()).abs() < 1e-14);
        let mass = quad_adaptive(|t| dlif_density(&r, t, 1e-12).unwrap(), 0.0, 20.0, 1e-10).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn learned_drive_density_normalises() {
        let drive = DriveFunction::learned(|t| (3.0 * t).sin());
        let r = RateFunction::from_drive(drive, DEFAULT_RATE_BOUNDS).unwrap();
        let upper = 50.0 / r.bounds().0;
        let mass = quad_adaptive(|t| dlif_density(&r, t, 1e-11).unwrap(), 0.0, upper, 1e-8).unwrap();
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn tabulated_integral_is_exact() {
        let t = Table::new(vec![0.0, 1.0, 3.0], vec![1.0, 3.0, 1.0]).unwrap();
        // 2 on [0,1], 4 on [1,3], then constant 1
        assert!((t.integral_to(1.0) - 2.0).abs() < 1e-15);
        assert!((t.integral_to(3.0) - 6.0).abs() < 1e-15);
        assert!((t.integral_to(5.0) - 8.0).abs() < 1e-15);
        assert!((t.integral_to(0.5) - 0.5 * (1.0 + 2.0) * 0.5).abs() < 1e-15);
    }

    #[test]
    fn rate_csv_roundtrip() {
        let r = RateFunction::tabulated(Table::new(vec![0.0, 0.5, 2.0], vec![3.0, 4.5, 1.25]).unwrap()).unwrap();
        let csv = r.to_csv().unwrap();
        let back = RateFunction::from_csv(&csv).unwrap();
        assert_eq!(back.as_table(), r.as_table());
    }

    #[test]
    fn vanishing_rate_is_mostly_empty() {
        let r = RateFunction::constant(1e-4).unwrap();
        let mut rng = Rng::new(3);
        let nonempty = (0..100)
            .filter(|_| !sample_renewal(&r, 1.0, &mut rng).unwrap().channel(0).is_empty())
            .count();
        assert!(nonempty <= 2);
    }

    #[test]
    fn constant_rate_count_concentrates() {
        let r = RateFunction::constant(5.0).unwrap();
        let mut rng = Rng::new(11);
        let n = sample_renewal(&r, 1000.0, &mut rng).unwrap().channel(0).len() as f64;
        assert!((n - 5000.0).abs() <= 3.0 * 5000f64.sqrt(), "count {n}");
    }

    #[test]
    fn gating_widens_minimum_interval() {
        let min_gap = |r: &RateFunction, seed| {
            let ev = sample_renewal(r, 20.0, &mut Rng::new(seed)).unwrap();
            ev.channel(0).windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        };
        let plain = RateFunction::constant(50.0).unwrap();
        let gated = plain.clone().with_refractory(0.1).unwrap();
        for seed in 0..10 {
            assert!(min_gap(&gated, seed) > min_gap(&plain, seed), "seed {seed}");
        }
    }

    #[test]
    fn unbounded_rate_cannot_be_thinned() {
        let r = RateFunction::custom(|t| t, (0.1, f64::INFINITY)).unwrap();
        assert!(matches!(sample_renewal(&r, 1.0, &mut Rng::new(0)), Err(Error::UnboundedRate)));
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(lif_consistency(|_| 1.5, |_| 1.5, 2.0, 11).unwrap(), 0.0);
        assert!((lif_consistency(|_| 2.0, |_| 1.0, 3.0, 7).unwrap() - 3.0).abs() < 1e-12);
        let v = lif_consistency(|t| t, |_| 0.0, 1.0, 10001).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }
}
