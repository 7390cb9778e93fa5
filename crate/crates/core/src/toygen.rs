//! Synthetic renewal sequences with band-labelled rates.
//!
//! A rate `λ` is drawn from a truncated normal inside its band; a sequence
//! has exponential gaps `Δt ~ Exp(λ)`, cumulative times `t_i`, and
//! observations `y_i = sin(t_i) + η_i` with `η ~ N(0, σ_η²)`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{normal_cdf, Rng};
use crate::par::Exec;
use crate::{Error, Result};

pub const DEFAULT_OBSERVATIONS: usize = 20;
pub const DEFAULT_NOISE: f64 = 0.07;
const MIN_ACCEPTANCE: f64 = 1e-6;
/// Below this width (in units of σ) a band is sampled uniformly; the
/// truncated normal is flat to within `width²` there.
const FLAT_WIDTH: f64 = 1e-6;
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        let name = name.into();
        if !(lo < mu && mu < hi && sigma > 0.0) {
            return Err(Error::DegenerateBand(format!(
                "{name}: need lo < mu < hi and sigma > 0, got [{lo}, {hi}], mu {mu}, sigma {sigma}"
            )));
        }
        Ok(Self { name, mu, sigma, lo, hi })
    }

    pub fn low() -> Self {
        Self::new("low", 7.5, 1.0, 5.0, 10.0).expect("valid preset")
    }

    pub fn mid() -> Self {
        Self::new("mid", 12.5, 1.0, 10.0, 15.0).expect("valid preset")
    }

    pub fn high() -> Self {
        Self::new("high", 17.5, 1.0, 15.0, 20.0).expect("valid preset")
    }

    pub fn all() -> Vec<Self> {
        vec![Self::low(), Self::mid(), Self::high()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|b| b.name == name)
    }

    pub fn contains(&self, rate: f64) -> bool {
        (self.lo..=self.hi).contains(&rate)
    }

    fn acceptance(&self) -> f64 {
        normal_cdf((self.hi - self.mu) / self.sigma) - normal_cdf((self.lo - self.mu) / self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRecord {
    pub rate: f64,
    pub times: Vec<f64>,
    pub obs: Vec<f64>,
    pub band: String,
    pub split: Split,
    pub seed: u64,
}

/// Truncated-normal rate by rejection.
pub fn sample_rate(band: &BandSpec, rng: &mut Rng) -> Result<f64> {
    if (band.hi - band.lo) < FLAT_WIDTH * band.sigma {
        return Ok(rng.uniform_in(band.lo, band.hi));
    }
    if band.acceptance() < MIN_ACCEPTANCE {
        return Err(Error::DegenerateBand(format!(
            "{}: acceptance {:.3e} below {MIN_ACCEPTANCE:e}",
            band.name,
            band.acceptance()
        )));
    }
    loop {
        let x = band.mu + band.sigma * rng.normal();
        if band.contains(x) {
            return Ok(x);
        }
    }
}

/// One sequence of `n` events at rate `rate`. The record carries no band
/// or split; callers fill them in.
pub fn gen_sequence(rate: f64, n: usize, noise: f64, rng: &mut Rng) -> Result<ToyRecord> {
    if !(rate > 0.0) || n == 0 || !(noise >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sequence needs rate > 0, n >= 1, noise >= 0; got {rate}, {n}, {noise}"
        )));
    }
    let mut t = 0.0;
    let mut times = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.exponential(rate);
        times.push(t);
        let eta = if noise > 0.0 { noise * rng.normal() } else { 0.0 };
        obs.push(t.sin() + eta);
    }
    Ok(ToyRecord {
        rate,
        times,
        obs,
        band: String::new(),
        split: Split::Train,
        seed: rng.seed(),
    })
}

/// Rates per split and sequences per rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seqs: usize,
}

impl SplitCounts {
    pub const DESK: SplitCounts = SplitCounts {
        train: 10,
        val: 5,
        test: 5,
        seqs: 10,
    };
    pub const FULL: SplitCounts = SplitCounts {
        train: 150,
        val: 25,
        test: 25,
        seqs: 50,
    };

    pub fn rates(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub bands: Vec<BandSpec>,
    pub counts: SplitCounts,
    pub observations: usize,
    pub noise: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            bands: BandSpec::all(),
            counts: SplitCounts::DESK,
            observations: DEFAULT_OBSERVATIONS,
            noise: DEFAULT_NOISE,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<ToyRecord>,
    pub val: Vec<ToyRecord>,
    pub test: Vec<ToyRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[ToyRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<ToyRecord> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Draws rates for every split of one band from a single stream,
/// redrawing exact duplicates.
fn draw_band_rates(band: &BandSpec, counts: &SplitCounts, taken: &mut Vec<f64>, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(3);
    for split in Split::ALL {
        let mut rates = Vec::with_capacity(counts.rates(split));
        for _ in 0..counts.rates(split) {
            let mut redraws = 0;
            let rate = loop {
                let r = sample_rate(band, rng)?;
                if !taken.contains(&r) {
                    break r;
                }
                redraws += 1;
                if redraws >= MAX_REDRAWS {
                    return Err(Error::Collision(taken.len()));
                }
            };
            taken.push(rate);
            rates.push(rate);
        }
        out.push(rates);
    }
    Ok(out)
}

/// `seqs` sequences for each of `rates`, tagged with band and split.
pub fn gen_split(
    band: &BandSpec,
    rates: &[f64],
    seqs: usize,
    split: Split,
    observations: usize,
    noise: f64,
    rng: &Rng,
    exec: Exec,
) -> Result<Vec<ToyRecord>> {
    let per_rate = exec.try_map_range(rates.len(), |i| {
        let rate_rng = rng.split(i as u64);
        (0..seqs)
            .map(|s| {
                let mut seq_rng = rate_rng.split(s as u64);
                let mut rec = gen_sequence(rates[i], observations, noise, &mut seq_rng)?;
                rec.band = band.name.clone();
                rec.split = split;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_rate.into_iter().flatten().collect())
}

/// All splits for all bands. Rates are pairwise distinct across the whole
/// dataset.
pub fn gen_dataset(cfg: &GenConfig, exec: Exec) -> Result<Dataset> {
    let root = Rng::new(cfg.seed);
    let mut taken = Vec::new();
    let mut data = Dataset::default();
    for (b, band) in cfg.bands.iter().enumerate() {
        let mut rate_rng = root.split(b as u64).split(0);
        let rates = draw_band_rates(band, &cfg.counts, &mut taken, &mut rate_rng)?;
        for (s, split) in Split::ALL.into_iter().enumerate() {
            let seq_rng = root.split(b as u64).split(1 + s as u64);
            let recs = gen_split(band, &rates[s], cfg.counts.seqs, split, cfg.observations, cfg.noise, &seq_rng, exec)?;
            data.split_mut(split).extend(recs);
        }
    }
    Ok(data)
}

pub fn to_jsonl(records: &[ToyRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::json("toy record", e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(records: &[ToyRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl(records)?.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ToyRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e)))
        .collect()
}
