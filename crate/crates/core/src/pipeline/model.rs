//! Toy-scale model: observation encoder, dLIF drive, event surrogate with
//! latent ODE decoder, and a band classifier.

use serde::{Deserialize, Serialize};

use crate::dlif::{rate_to_drive, DEFAULT_RATE_BOUNDS};
use crate::epde::{EpdeConfig, EpdeLayout, SCALE_FLOOR, TAU_FLOOR};
use crate::melp::{sample_interval, IntervalPrior, MixtureVars, SampleMode};
use crate::numerics::{softplus_inv, Dense, ParamStore, Rng, Tape, Var};
use crate::{Error, Result};

/// How the latent ODE starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeInit {
    /// Glorot-random field, projection and decoder.
    Random,
    /// Linear field starts as a unit-frequency rotation in the first two
    /// state dimensions, read out by the decoder.
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_len: usize,
    pub enc_hidden: usize,
    /// Observations around each step appended to the encoder summary to
    /// form that step's features: `y_{i-1}, y_i` when 2.
    pub context: usize,
    pub epde: EpdeConfig,
    pub cls_hidden: usize,
    pub classes: Vec<String>,
    pub rate_bounds: (f64, f64),
    /// Multiplier on the drive layer output, so the prior rate can cover the
    /// band range within a short run.
    pub drive_gain: f64,
    /// Refractory recovery constant of the prior, seconds.
    pub refractory: f64,
    /// Lognormal interval prior per class, matched to the band midpoint.
    pub interval_priors: Vec<IntervalPrior>,
    /// Initial mean interval rate, Hz.
    pub init_rate: f64,
    pub init_scale: f64,
    pub ode_init: OdeInit,
    /// Horizon for the event-time KL, the rate-consistency grid and the
    /// graph grid, seconds.
    pub window: f64,
    pub kl_eps: f64,
    pub kl_steps: usize,
    pub lif_grid: usize,
    pub erg_alpha: f64,
    pub erg_grid: usize,
    pub erg_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_len: crate::toygen::DEFAULT_OBSERVATIONS,
            enc_hidden: 32,
            context: 2,
            epde: EpdeConfig::default(),
            cls_hidden: 16,
            classes: vec!["low".into(), "mid".into(), "high".into()],
            rate_bounds: DEFAULT_RATE_BOUNDS,
            drive_gain: 10.0,
            refractory: 0.005,
            interval_priors: [7.5, 12.5, 17.5]
                .iter()
                .map(|mid| IntervalPrior {
                    mean_interval: 1.0 / mid,
                    s: 0.5,
                })
                .collect(),
            init_rate: 12.5,
            init_scale: 0.3,
            ode_init: OdeInit::Rotation,
            window: 5.0,
            kl_eps: crate::ivp_kl::TRAIN_EPS,
            kl_steps: crate::ivp_kl::TRAIN_ODE_STEPS,
            lif_grid: 101,
            erg_alpha: crate::erg::DEFAULT_ALPHA,
            erg_grid: crate::erg::DEFAULT_GRID,
            erg_sigma: 1.0,
        }
    }
}

impl ModelConfig {
    /// Width of the global encoder summary.
    pub fn summary_dim(&self) -> usize {
        self.epde.feature_dim.saturating_sub(self.context)
    }

    pub fn validate(&self) -> Result<()> {
        if self.summary_dim() == 0 || self.obs_len == 0 || self.classes.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "model needs obs_len > 0, classes, and feature_dim ({}) above context ({})",
                self.epde.feature_dim, self.context
            )));
        }
        if !(self.drive_gain > 0.0) {
            return Err(Error::InvalidParameter(format!("drive gain must be positive, got {}", self.drive_gain)));
        }
        if self.interval_priors.len() != self.classes.len() {
            return Err(Error::Shape(format!(
                "{} interval priors for {} classes",
                self.interval_priors.len(),
                self.classes.len()
            )));
        }
        Ok(())
    }

    pub fn class_index(&self, band: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == band)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown band label {band:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub enc1: Dense,
    pub enc2: Dense,
    pub drive: Dense,
    pub epde: EpdeLayout,
    pub cls1: Dense,
    pub cls2: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub store: ParamStore,
}

/// How intervals are produced in a forward pass.
pub enum Draw<'a> {
    /// Mixture means; deterministic.
    Mean,
    Relaxed { rng: &'a mut Rng, temperature: f64 },
}

/// Tape handles produced by one forward pass over a record.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Var,
    /// Prior base rate `r` from the dLIF drive.
    pub rate: Var,
    pub mixtures: Vec<MixtureVars>,
    /// Predicted event times.
    pub times: Vec<Var>,
    /// `1 / mixture mean` per step.
    pub step_rates: Vec<Var>,
    /// Decoded observation per event.
    pub recon: Var,
    pub logits: Var,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed).split(0x6d6f64656c);
        let mut store = ParamStore::new();
        let f = config.summary_dim();
        let enc1 = Dense::new(&mut store, "enc1", config.obs_len, config.enc_hidden, &mut rng);
        let enc2 = Dense::new(&mut store, "enc2", config.enc_hidden, f, &mut rng);
        // linear in ln r̄ around init_rate, where the pre-activation slope in
        // ln r is about r0
        let r0 = config.init_rate;
        let g = config.drive_gain;
        let drive_bias = (softplus_inv(rate_to_drive(r0) - 1.0) - r0 * r0.ln()) / g;
        let mut drive_w = vec![0.0; f];
        drive_w.push(r0 / g);
        let drive = Dense::from_parts(&mut store, "drive", f + 1, 1, drive_w, vec![drive_bias]);
        let epde = EpdeLayout::init(&mut store, config.epde, &mut rng);
        let cls1 = Dense::new(&mut store, "cls1", f + 1, config.cls_hidden, &mut rng);
        let cls2 = Dense::new(&mut store, "cls2", config.cls_hidden, config.classes.len(), &mut rng);
        let mut model = Self {
            config,
            layout: ModelLayout {
                enc1,
                enc2,
                drive,
                epde,
                cls1,
                cls2,
            },
            store,
        };
        model.init_heads();
        model
    }

    fn init_heads(&mut self) {
        let k = self.config.epde.k;
        let tau0 = softplus_inv(1.0 / self.config.init_rate - TAU_FLOOR);
        let s0 = softplus_inv(self.config.init_scale - SCALE_FLOOR);
        let head = self.layout.epde.head;
        let bias = self.store.get_mut(head.b);
        bias[..k].iter_mut().for_each(|b| *b = 0.0);
        bias[k..2 * k].iter_mut().for_each(|b| *b = tau0);
        bias[2 * k..].iter_mut().for_each(|b| *b = s0);
        // start the interval head near its bias so every record begins at the prior rate
        self.store.get_mut(head.w).iter_mut().for_each(|w| *w *= 0.1);

        if self.config.ode_init == OdeInit::Rotation {
            let d = self.config.epde.state_dim;
            let lay = self.layout.epde;
            let lin = self.store.get_mut(lay.field_lin);
            lin.iter_mut().for_each(|x| *x = 0.0);
            lin[1] = 1.0;
            lin[d] = -1.0;
            for id in [lay.field_out, lay.proj.w, lay.field_in.w] {
                self.store.get_mut(id).iter_mut().for_each(|x| *x = 0.0);
            }
            let pb = self.store.get_mut(lay.proj.b);
            pb.iter_mut().for_each(|x| *x = 0.0);
            pb[1] = 1.0;
            let dw = self.store.get_mut(lay.decode.w);
            dw.iter_mut().for_each(|x| *x = 0.0);
            dw[0] = 1.0;
        }
    }

    /// Replaces the parameters after checking the layout.
    pub fn with_store(mut self, store: ParamStore) -> Result<Self> {
        self.store.check_layout(&store)?;
        self.store = store;
        Ok(self)
    }

    pub fn encode(&self, tape: &mut Tape, vars: &[Var], obs: &[f64]) -> Result<Var> {
        if obs.len() != self.config.obs_len {
            return Err(Error::Shape(format!(
                "model expects {} observations, got {}",
                self.config.obs_len,
                obs.len()
            )));
        }
        let x = tape.constant_vec(obs.to_vec());
        let h = self.layout.enc1.forward(tape, vars, x);
        let h = tape.tanh(h);
        let z = self.layout.enc2.forward(tape, vars, h);
        Ok(tape.tanh(z))
    }

    /// `r = 1 / -ln(1 - 1/b)` with `b = 1 + softplus(k (w·[z, ln r̄] + c))`,
    /// clamped to the rate bounds. `r̄` is the surrogate's mean step rate.
    pub fn prior_rate(&self, tape: &mut Tape, vars: &[Var], z: Var, log_rate: Var) -> Var {
        let input = tape.concat(&[z, log_rate]);
        let pre = self.layout.drive.forward(tape, vars, input);
        let pre = tape.scale(pre, self.config.drive_gain);
        let b = tape.softplus(pre);
        let b = tape.shift(b, 1.0);
        let one = tape.constant_scalar(1.0);
        let inv = tape.div(one, b);
        let one_minus = tape.neg(inv);
        let one_minus = tape.shift(one_minus, 1.0);
        let ln = tape.log(one_minus);
        let neg_ln = tape.neg(ln);
        let r = tape.div(one, neg_ln);
        let (lo, hi) = self.config.rate_bounds;
        tape.clamp(r, lo, hi)
    }

    /// Features for step `i`: the summary followed by the observations
    /// ending at index `i`, zero-padded before the sequence start.
    fn step_features(&self, tape: &mut Tape, z: Var, obs: &[f64], i: usize) -> Var {
        let c = self.config.context;
        if c == 0 {
            return z;
        }
        let local: Vec<f64> = (0..c)
            .map(|k| (i + 1 + k).checked_sub(c).and_then(|j| obs.get(j)).copied().unwrap_or(0.0))
            .collect();
        let local = tape.constant_vec(local);
        tape.concat(&[z, local])
    }

    /// Unrolls one predicted event per observation and decodes the latent
    /// trajectory at each event.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], obs: &[f64], mut draw: Draw<'_>) -> Result<Forward> {
        let lay = &self.layout;
        let z = self.encode(tape, vars, obs)?;
        let mut prev = tape.constant_scalar(0.0);
        let f0 = self.step_features(tape, z, obs, 0);
        let mut y = lay.epde.project(tape, vars, f0);
        let one = tape.constant_scalar(1.0);
        let n = obs.len();
        let (mut mixtures, mut times, mut step_rates, mut recon) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let fi = self.step_features(tape, z, obs, i);
            let mix = lay.epde.mixture(tape, vars, prev, fi);
            let mean = mix.mean(tape);
            let tau = match &mut draw {
                Draw::Mean => mean,
                Draw::Relaxed { rng, temperature } => {
                    let value = mix.value(tape)?;
                    let sample = sample_interval(&value, rng, SampleMode::Relaxed { temperature: *temperature })?;
                    mix.replay(tape, &sample.trace)
                }
            };
            let t = tape.add(prev, tau);
            y = lay.epde.evolve(tape, vars, y, tau);
            let out = lay.epde.decode(tape, vars, y);
            recon.push(tape.index(out, 0));
            step_rates.push(tape.div(one, mean));
            mixtures.push(mix);
            times.push(t);
            prev = t;
        }
        let recon = tape.concat(&recon);
        let rates = tape.concat(&step_rates);
        let mean_rate = tape.mean(rates);
        let log_rate = tape.log(mean_rate);
        let rate = self.prior_rate(tape, vars, z, log_rate);
        let cls_in = tape.concat(&[z, log_rate]);
        let h = lay.cls1.forward(tape, vars, cls_in);
        let h = tape.tanh(h);
        let logits = lay.cls2.forward(tape, vars, h);
        Ok(Forward {
            features: z,
            rate,
            mixtures,
            times,
            step_rates,
            recon,
            logits,
        })
    }
}

/// Deterministic prediction for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub recon: Vec<f64>,
    pub times: Vec<f64>,
    pub step_means: Vec<f64>,
    pub prior_rate: f64,
    pub class_probs: Vec<f64>,
}

impl Model {
    pub fn predict(&self, obs: &[f64]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let f = self.forward(&mut tape, &vars, obs, Draw::Mean)?;
        if let Some(msg) = tape.poisoned() {
            return Err(Error::Domain(msg.to_string()));
        }
        Ok(Prediction {
            recon: tape.value(f.recon).to_vec(),
            times: f.times.iter().map(|t| tape.scalar(*t)).collect(),
            step_means: f.step_rates.iter().map(|r| 1.0 / tape.scalar(*r)).collect(),
            prior_rate: tape.scalar(f.rate),
            class_probs: crate::numerics::softmax(tape.value(f.logits)),
        })
    }
}
