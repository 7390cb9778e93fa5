//! Event posterior surrogate: a monotone next-event map producing lognormal
//! mixtures, event unrolling, and the explicit-Euler latent trajectory.

use serde::{Deserialize, Serialize};

use crate::dlif::{RateFunction, Table};
use crate::melp::{sample_interval, LognormalMixture, MixtureVars, SampleMode, SampleTrace};
use crate::numerics::{Dense, ParamStore, Rng, Tape, Var};
use crate::{Error, Result};

/// Hard cap on events per channel and window.
pub const MAX_EVENTS: usize = 256;
pub const TAU_FLOOR: f64 = 1e-4;
pub const SCALE_FLOOR: f64 = 0.01;

/// Latent event times per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRealization {
    channels: Vec<Vec<f64>>,
    seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    traces: Vec<Vec<SampleTrace>>,
}

impl EventRealization {
    pub fn new(channels: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        for (c, ch) in channels.iter().enumerate() {
            if ch.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || ch.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidParameter(format!(
                    "channel {c} event times must be finite, nonnegative and strictly increasing"
                )));
            }
        }
        Ok(Self {
            channels,
            seed,
            traces: Vec::new(),
        })
    }

    pub(crate) fn single(events: Vec<f64>, seed: u64) -> Self {
        Self {
            channels: vec![events],
            seed,
            traces: Vec::new(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sampling traces aligned with each channel's events, when recorded.
    pub fn traces(&self) -> &[Vec<SampleTrace>] {
        &self.traces
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpdeConfig {
    /// Mixture components.
    pub k: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    /// Latent ODE state size.
    pub state_dim: usize,
    /// Decoded trajectory length.
    pub out_dim: usize,
    pub substeps: usize,
    pub alpha_ode: f64,
}

impl Default for EpdeConfig {
    fn default() -> Self {
        Self {
            k: 3,
            feature_dim: 16,
            hidden: 16,
            state_dim: 4,
            out_dim: 1,
            substeps: 4,
            alpha_ode: 0.01,
        }
    }
}

/// Tensor identifiers of the surrogate and ODE head inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpdeLayout {
    pub config: EpdeConfig,
    pub hidden: Dense,
    pub head: Dense,
    pub proj: Dense,
    /// Linear part `A` of the vector field.
    pub field_lin: usize,
    pub field_in: Dense,
    pub field_out: usize,
    pub decode: Dense,
}

impl EpdeLayout {
    /// Adds freshly initialised tensors to `store`.
    pub fn init(store: &mut ParamStore, config: EpdeConfig, rng: &mut Rng) -> Self {
        let d = config.state_dim;
        let hidden = Dense::new(store, "epde.hidden", 1 + config.feature_dim, config.hidden, rng);
        let head = Dense::new(store, "epde.head", config.hidden, 3 * config.k, rng);
        let proj = Dense::new(store, "ode.proj", config.feature_dim, d, rng);
        let limit = (3.0 / d as f64).sqrt() * 0.5;
        let lin = (0..d * d).map(|_| rng.uniform_in(-limit, limit)).collect();
        let field_lin = store.add("ode.lin", d, d, lin);
        let field_in = Dense::new(store, "ode.field_in", d, d, rng);
        let out = (0..d * d).map(|_| rng.uniform_in(-limit, limit)).collect();
        let field_out = store.add("ode.field_out", d, d, out);
        let decode = Dense::new(store, "ode.decode", d, config.out_dim, rng);
        Self {
            config,
            hidden,
            head,
            proj,
            field_lin,
            field_in,
            field_out,
            decode,
        }
    }

    /// Next-interval mixture from the previous event time and channel features.
    pub fn mixture(&self, tape: &mut Tape, vars: &[Var], prev_t: Var, features: Var) -> MixtureVars {
        let k = self.config.k;
        let input = tape.concat(&[prev_t, features]);
        let h = self.hidden.forward(tape, vars, input);
        let h = tape.tanh(h);
        let raw = self.head.forward(tape, vars, h);
        let logits = tape.slice(raw, 0, k);
        let tau = tape.slice(raw, k, k);
        let tau = tape.softplus(tau);
        let tau = tape.shift(tau, TAU_FLOOR);
        let s = tape.slice(raw, 2 * k, k);
        let s = tape.softplus(s);
        let s = tape.shift(s, SCALE_FLOOR);
        MixtureVars::from_tau(tape, logits, tau, s)
    }

    pub fn project(&self, tape: &mut Tape, vars: &[Var], features: Var) -> Var {
        self.proj.forward(tape, vars, features)
    }

    /// `f(y) = A y + B tanh(C y + c)`.
    pub fn field(&self, tape: &mut Tape, vars: &[Var], y: Var) -> Var {
        let lin = tape.matvec(vars[self.field_lin], y);
        let inner = self.field_in.forward(tape, vars, y);
        let inner = tape.tanh(inner);
        let nonlin = tape.matvec(vars[self.field_out], inner);
        tape.add(lin, nonlin)
    }

    /// Explicit-Euler substeps `y += Δt (f(y) + α y)` over a span `dt`.
    pub fn evolve(&self, tape: &mut Tape, vars: &[Var], y: Var, dt: Var) -> Var {
        let n = self.config.substeps;
        let h = tape.scale(dt, 1.0 / n as f64);
        let mut y = y;
        for _ in 0..n {
            let f = self.field(tape, vars, y);
            let ay = tape.scale(y, self.config.alpha_ode);
            let rhs = tape.add(f, ay);
            let step = tape.mul_scalar(rhs, h);
            y = tape.add(y, step);
        }
        y
    }

    pub fn decode(&self, tape: &mut Tape, vars: &[Var], y: Var) -> Var {
        self.decode.forward(tape, vars, y)
    }
}

/// Standalone surrogate parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpdeParams {
    pub layout: EpdeLayout,
    pub store: ParamStore,
}

impl EpdeParams {
    pub fn new(config: EpdeConfig, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let layout = EpdeLayout::init(&mut store, config, rng);
        Self { layout, store }
    }

    /// All tensors zero.
    pub fn zeros(config: EpdeConfig) -> Self {
        let mut p = Self::new(config, &mut Rng::new(0));
        p.store.tensors_mut().iter_mut().for_each(|t| t.iter_mut().for_each(|x| *x = 0.0));
        p
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        let want = self.layout.config.feature_dim;
        if features.len() != want {
            return Err(Error::Shape(format!(
                "expected {want} channel features, got {}",
                features.len()
            )));
        }
        Ok(())
    }
}

/// Mixture for the interval following an event at `prev_t`.
pub fn next_event_params(prev_t: f64, features: &[f64], params: &EpdeParams) -> Result<LognormalMixture> {
    if !(prev_t >= 0.0) {
        return Err(Error::InvalidParameter(format!("previous event time must be >= 0, got {prev_t}")));
    }
    params.check_features(features)?;
    let mut tape = Tape::new();
    let vars = params.store.bind(&mut tape);
    let p = tape.constant_scalar(prev_t);
    let f = tape.constant_vec(features.to_vec());
    let mix = params.layout.mixture(&mut tape, &vars, p, f);
    if let Some(msg) = tape.poisoned() {
        return Err(Error::Domain(msg.to_string()));
    }
    mix.value(&tape)
}

/// How each interval is drawn during unrolling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UnrollMode {
    Sample(SampleMode),
    /// Deterministic limit: every interval equals the mixture mean.
    Mean,
}

/// Unrolled channel events with the mixture used at every step, including
/// the final one whose draw left the window.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub events: EventRealization,
    pub mixtures: Vec<Vec<LognormalMixture>>,
}

pub fn unroll_events(
    features: &[Vec<f64>],
    window: f64,
    params: &EpdeParams,
    rng: &mut Rng,
    mode: UnrollMode,
) -> Result<Unrolled> {
    if !(window > 0.0) {
        return Err(Error::InvalidParameter(format!("window must be positive, got {window}")));
    }
    let seed = rng.seed();
    let mut channels = Vec::with_capacity(features.len());
    let mut traces = Vec::with_capacity(features.len());
    let mut mixtures = Vec::with_capacity(features.len());
    // rounding slack so deterministic unrolls that land on the window edge count
    let edge = window * (1.0 + 1e-12);
    for feat in features {
        params.check_features(feat)?;
        let mut events: Vec<f64> = Vec::new();
        let mut trace = Vec::new();
        let mut mixes = Vec::new();
        let mut t = 0.0;
        loop {
            if events.len() == MAX_EVENTS {
                let mean_gap = t / MAX_EVENTS as f64;
                if mean_gap < TAU_FLOOR {
                    return Err(Error::DegenerateRate { mean_interval: mean_gap });
                }
                break;
            }
            let mix = next_event_params(t, feat, params)?;
            let tau = match mode {
                UnrollMode::Mean => mix.mean(),
                UnrollMode::Sample(m) => {
                    let draw = sample_interval(&mix, rng, m)?;
                    trace.push(draw.trace);
                    draw.tau
                }
            };
            mixes.push(mix);
            let next = t + tau;
            if next > edge {
                trace.truncate(events.len());
                break;
            }
            let next = next.min(window);
            if next <= t {
                // interval below float resolution at this time scale
                return Err(Error::DegenerateRate { mean_interval: tau });
            }
            events.push(next);
            t = next;
        }
        channels.push(events);
        traces.push(trace);
        mixtures.push(mixes);
    }
    let mut events = EventRealization::new(channels, seed)?;
    events.traces = traces;
    Ok(Unrolled { events, mixtures })
}

/// Decoded latent trajectory after evolving from `t_s` to `t_e`.
pub fn evolve_ode(features: &[f64], t_s: f64, t_e: f64, params: &EpdeParams) -> Result<Vec<f64>> {
    if !(t_e > t_s) {
        return Err(Error::InvalidParameter(format!("need t_e > t_s, got [{t_s}, {t_e}]")));
    }
    params.check_features(features)?;
    let layout = &params.layout;
    let mut tape = Tape::new();
    let vars = params.store.bind(&mut tape);
    let f = tape.constant_vec(features.to_vec());
    let y0 = layout.project(&mut tape, &vars, f);
    let dt = tape.constant_scalar(t_e - t_s);
    let y = layout.evolve(&mut tape, &vars, y0, dt);
    if tape.value(y).iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: layout.config.substeps });
    }
    let out = layout.decode(&mut tape, &vars, y);
    Ok(tape.value(out).to_vec())
}

/// Plain explicit Euler for `y' = f(y) + α y`, reporting the first
/// non-finite substep.
pub fn euler_evolve<F>(f: F, y0: &[f64], alpha: f64, t_s: f64, t_e: f64, substeps: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if substeps == 0 {
        return Err(Error::InvalidParameter("need at least one substep".into()));
    }
    let h = (t_e - t_s) / substeps as f64;
    let mut y = y0.to_vec();
    for step in 0..substeps {
        let fy = f(&y);
        for (yi, fi) in y.iter_mut().zip(&fy) {
            *yi += h * (fi + alpha * *yi);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: step + 1 });
        }
    }
    Ok(y)
}

/// Step boundaries and centres of a mean-interval sequence.
pub fn step_centres(means: &[f64]) -> Vec<f64> {
    let mut start = 0.0;
    means
        .iter()
        .map(|m| {
            let c = start + 0.5 * m;
            start += m;
            c
        })
        .collect()
}

/// Rate proxy `1 / mean` per step, linear between step centres and constant
/// beyond the first and last centre.
pub fn rate_proxy(mixtures: &[LognormalMixture]) -> Result<RateFunction> {
    if mixtures.is_empty() {
        return Err(Error::InvalidParameter("rate proxy needs at least one step".into()));
    }
    let means: Vec<f64> = mixtures.iter().map(LognormalMixture::mean).collect();
    let centres = step_centres(&means);
    let rates = means.iter().map(|m| 1.0 / m).collect();
    RateFunction::tabulated(Table::new(centres, rates)?)
}

/// Interpolation weights of the rate proxy at `t`: `(k, w)` meaning
/// `(1 - w) v[k] + w v[k + 1]`, with `k + 1` clamped to the last step.
pub fn proxy_weights(centres: &[f64], t: f64) -> (usize, f64) {
    let n = centres.len();
    if n == 1 || t <= centres[0] {
        return (0, 0.0);
    }
    if t >= centres[n - 1] {
        return (n - 1, 0.0);
    }
    let k = centres.partition_point(|c| *c <= t) - 1;
    (k, (t - centres[k]) / (centres[k + 1] - centres[k]))
}
