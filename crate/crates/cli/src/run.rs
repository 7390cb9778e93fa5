//! Subcommand bodies. Each resolves its parameters (flags, then the config
//! file, then defaults), writes a manifest, then its artifacts.

use std::path::{Path, PathBuf};

use latent_events::dlif::{RateFunction, Table};
use latent_events::epde::EventRealization;
use latent_events::erg::{build_adjacency, pearson_corr, time_grid, upward_crossings, Adjacency, DEFAULT_ALPHA, DEFAULT_GRID};
use latent_events::ivp_kl::{kl_bound, kl_oracle, KlProblem, QFamily};
use latent_events::par::Exec;
use latent_events::pipeline::{
    evaluate, train_toy, Checkpoint, ConstantRateModel, ModelConfig, ObjectiveWeights, OracleModel, RateModel,
    TrainConfig,
};
use latent_events::stability::{
    default_tau_grid, gaussian_expectation_report, deterministic_report, subgaussian_report, NoiseModel, StabilityConfig,
};
use latent_events::toygen::{gen_dataset, read_jsonl, to_jsonl, BandSpec, GenConfig, SplitCounts, ToyRecord};
use latent_events::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::*;
use crate::manifest::Manifest;

/// Resolved global options.
pub struct Context {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub exec: Exec,
    pub file: Option<Value>,
}

impl Context {
    fn out(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.clone())
    }

    /// Overlays explicitly set flags onto the config-file section.
    fn resolve<T: Serialize + DeserializeOwned>(&self, section: &str, flags: &T) -> Result<T> {
        let mut base = self
            .file
            .as_ref()
            .and_then(|f| f.get(section))
            .cloned()
            .unwrap_or_else(|| json!({}));
        let over = serde_json::to_value(flags).map_err(|e| Error::json("flags", e))?;
        if let (Some(b), Value::Object(o)) = (base.as_object_mut(), over) {
            for (k, v) in o {
                let set = match &v {
                    Value::Null => false,
                    Value::Bool(flag) => *flag,
                    _ => true,
                };
                if set || !b.contains_key(&k) {
                    b.insert(k, v);
                }
            }
        }
        serde_json::from_value(base).map_err(|e| Error::json(format!("config section `{section}`"), e))
    }
}

fn manifest(dir: &Path, command: &'static str, seed: u64, params: &impl Serialize) -> Result<Manifest> {
    let config = json!({ "seed": seed, "params": params });
    Manifest::begin(dir.join("manifest.json"), command, config)
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidParameter(format!("missing required --{flag}")))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_file(path: PathBuf, split: &str) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{split}.jsonl"))
    } else {
        path
    }
}

pub fn gen(ctx: &Context, flags: &GenArgs) -> Result<()> {
    let p: GenArgs = ctx.resolve("gen", flags)?;
    let rates = p.rates.unwrap_or(SplitCounts::DESK.train);
    let half = rates.div_ceil(2);
    let counts = SplitCounts {
        train: rates,
        val: p.val_rates.unwrap_or(half),
        test: p.test_rates.unwrap_or(half),
        seqs: p.seqs.unwrap_or(SplitCounts::DESK.seqs),
    };
    let bands = match p.band.unwrap_or(BandChoice::All) {
        BandChoice::Low => vec![BandSpec::low()],
        BandChoice::Mid => vec![BandSpec::mid()],
        BandChoice::High => vec![BandSpec::high()],
        BandChoice::All => BandSpec::all(),
    };
    let cfg = GenConfig {
        bands,
        counts,
        observations: p.observations.unwrap_or(latent_events::toygen::DEFAULT_OBSERVATIONS),
        noise: p.noise.unwrap_or(latent_events::toygen::DEFAULT_NOISE),
        seed: ctx.seed,
    };
    let out = ctx.out(&p.out);
    let mut m = manifest(&out, "gen", ctx.seed, &cfg)?;
    let data = gen_dataset(&cfg, ctx.exec)?;
    for split in latent_events::toygen::Split::ALL {
        let recs = data.split(split);
        log::info!("{}: {} records", split.name(), recs.len());
        m.emit(&out.join(format!("{}.jsonl", split.name())), to_jsonl(recs)?.as_bytes())?;
    }
    m.finish()
}

#[derive(Debug, Serialize)]
struct TrainEcho<'a> {
    data: &'a Path,
    config: &'a TrainConfig,
}

pub fn train(ctx: &Context, flags: &TrainArgs) -> Result<()> {
    let p: TrainArgs = ctx.resolve("train", flags)?;
    let data = ctx.out(&p.data);
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        model: ModelConfig::default(),
        weights: ObjectiveWeights {
            beta: p.beta.unwrap_or(d.weights.beta),
            lif: p.lambda_lif.unwrap_or(d.weights.lif),
            aux: p.lambda_aux.unwrap_or(d.weights.aux),
            ..d.weights
        },
        adam: latent_events::numerics::AdamConfig {
            lr: p.lr.unwrap_or(d.adam.lr),
            weight_decay: p.weight_decay.unwrap_or(d.adam.weight_decay),
            ..d.adam
        },
        clip_norm: p.clip.unwrap_or(d.clip_norm),
        epochs: p.epochs.unwrap_or(d.epochs),
        batch: p.batch.unwrap_or(d.batch),
        channels: p.channels.unwrap_or(d.channels),
        seed: ctx.seed,
        plateau: p.plateau.unwrap_or(d.plateau),
        ..d
    };
    let out = ctx.out(&p.out);
    let mut m = manifest(&out, "train", ctx.seed, &TrainEcho { data: &data, config: &cfg })?;
    let train = read_jsonl(&data.join("train.jsonl"))?;
    let val = read_jsonl(&data.join("val.jsonl"))?;
    let bands = bands_for(&cfg.model, &train)?;
    let outcome = train_toy(&cfg, &train, &val, &bands, ctx.exec)?;
    m.emit_json(&out.join("checkpoint.json"), &outcome.checkpoint)?;
    m.emit_json(&out.join("train_log.json"), &outcome.log)?;
    m.emit(&out.join("train_log.csv"), outcome.log.to_csv().as_bytes())?;
    m.finish()
}

/// Band specs for the model's classes that occur in `records`.
fn bands_for(model: &ModelConfig, records: &[ToyRecord]) -> Result<Vec<BandSpec>> {
    model
        .classes
        .iter()
        .filter(|c| records.iter().any(|r| &r.band == *c))
        .map(|c| BandSpec::by_name(c).ok_or_else(|| Error::InvalidParameter(format!("unknown band {c:?}"))))
        .collect()
}

fn load_model(ckpt: &Option<PathBuf>, reference: Option<Reference>, rate: Option<f64>) -> Result<(Box<dyn RateModel>, ModelConfig)> {
    let classes = ModelConfig::default();
    match (ckpt, reference) {
        (_, Some(Reference::Constant)) => Ok((
            Box::new(ConstantRateModel {
                rate: rate.unwrap_or(1.0),
                classes: classes.classes.len(),
            }),
            classes,
        )),
        (_, Some(Reference::Oracle)) => Ok((
            Box::new(OracleModel {
                classes: classes.classes.clone(),
            }),
            classes,
        )),
        (Some(path), None) => {
            let ck = Checkpoint::load(path)?;
            let cfg = ck.model.config.clone();
            Ok((Box::new(ck.model), cfg))
        }
        (None, None) => Err(Error::InvalidParameter("need --ckpt or --reference".into())),
    }
}

pub fn eval(ctx: &Context, flags: &EvalArgs) -> Result<()> {
    let p: EvalArgs = ctx.resolve("eval", flags)?;
    let data = split_file(ctx.out(&p.data), "test");
    let report_path = p.report.clone().unwrap_or_else(|| ctx.out_dir.join("report.json"));
    let scatter_path = p.scatter.clone().unwrap_or_else(|| ctx.out_dir.join("scatter.csv"));
    let dir = report_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = manifest(&dir, "eval", ctx.seed, &p)?;
    let (model, cfg) = load_model(&p.ckpt, p.reference, p.constant_rate)?;
    let records = read_jsonl(&data)?;
    let bands = bands_for(&cfg, &records)?;
    let report = evaluate(model.as_ref(), &records, &bands, ctx.seed, ctx.exec)?;
    for b in &report.bands {
        log::info!(
            "{}: median {:.3} [{:.3}, {:.3}] IoU {:.3}",
            b.band,
            b.median,
            b.ci_lo,
            b.ci_hi,
            b.iou
        );
    }
    log::info!("mean CS {:.4}, accuracy {:.3}", report.mean_cs, report.accuracy);
    m.emit_json(&report_path, &report)?;
    m.emit(&scatter_path, report.scatter_csv().as_bytes())?;
    m.finish()
}

pub fn plot_data(ctx: &Context, flags: &PlotDataArgs) -> Result<()> {
    let p: PlotDataArgs = ctx.resolve("plot-data", flags)?;
    let data = split_file(ctx.out(&p.data), "test");
    let out = ctx.out(&p.out);
    let mut m = manifest(&out, "plot-data", ctx.seed, &p)?;
    let (model, cfg) = load_model(&p.ckpt, None, None)?;
    let records = read_jsonl(&data)?;
    let bands = bands_for(&cfg, &records)?;
    let report = evaluate(model.as_ref(), &records, &bands, ctx.seed, ctx.exec)?;
    m.emit(&out.join("boundary_scatter.csv"), report.scatter_csv().as_bytes())?;
    m.emit(&out.join("rates.csv"), report.rates_csv().as_bytes())?;
    m.finish()
}

/// Problem file for `klbound`.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct KlSpec {
    q: QFamily,
    rate: RateSpec,
    horizon: f64,
    eps: f64,
    #[serde(default)]
    refractory: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum RateSpec {
    Constant(f64),
    Table { t: Vec<f64>, r: Vec<f64> },
}

pub fn klbound(ctx: &Context, flags: &KlboundArgs) -> Result<()> {
    let p: KlboundArgs = ctx.resolve("klbound", flags)?;
    let spec_path = require(p.spec.clone(), "spec")?;
    let text = read_text(&spec_path)?;
    let spec: KlSpec = serde_json::from_str(&text).map_err(|e| Error::json(spec_path.display().to_string(), e))?;
    let steps = p.ode_steps.unwrap_or(4096);
    let tol = p.oracle_tol.unwrap_or(1e-10);
    let mut m = manifest(&ctx.out_dir, "klbound", ctx.seed, &json!({ "spec": spec, "ode_steps": steps, "oracle_tol": tol }))?;
    let mut rate = match &spec.rate {
        RateSpec::Constant(r) => RateFunction::constant(*r)?,
        RateSpec::Table { t, r } => RateFunction::tabulated(Table::new(t.clone(), r.clone())?)?,
    };
    if let Some(rho) = spec.refractory {
        rate = rate.with_refractory(rho)?;
    }
    let problem = KlProblem::new(spec.q, rate, spec.horizon, spec.eps)?;
    let bound = kl_bound(&problem, steps)?;
    let oracle = kl_oracle(&problem, tol)?;
    let result = json!({
        "u_eps": bound.u_eps,
        "g_eps": bound.g_eps,
        "g_2eps": bound.g_2eps,
        "tail": bound.tail,
        "oracle": oracle,
        "gap": bound.u_eps - oracle,
    });
    println!("{}", serde_json::to_string_pretty(&result).map_err(|e| Error::json("klbound", e))?);
    m.emit_json(&ctx.out_dir.join("klbound.json"), &result)?;
    m.finish()
}

/// Reads `t,ch0,ch1,...` with a header row.
fn read_obs_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::InvalidParameter(format!("{} is empty", path.display())))?;
    let cols = header.split(',').count();
    if cols < 3 {
        return Err(Error::Shape(format!("{}: need a time column and at least two channels", path.display())));
    }
    let mut t = Vec::new();
    let mut chans = vec![Vec::new(); cols - 1];
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParameter(format!("{} row {}: {e}", path.display(), i + 2)))?;
        if vals.len() != cols {
            return Err(Error::Shape(format!("{} row {}: {} fields, header has {cols}", path.display(), i + 2, vals.len())));
        }
        t.push(vals[0]);
        for (c, v) in vals[1..].iter().enumerate() {
            chans[c].push(*v);
        }
    }
    if t.len() < 2 || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!("{}: times must be strictly increasing", path.display())));
    }
    Ok((t, chans))
}

#[derive(Serialize)]
struct GraphReport {
    pearson: Vec<f64>,
    erg: Adjacency,
    events: Vec<Vec<f64>>,
}

pub fn graph(ctx: &Context, flags: &GraphArgs) -> Result<()> {
    let p: GraphArgs = ctx.resolve("graph", flags)?;
    let obs_path = require(p.obs.clone(), "obs")?;
    let alpha = p.alpha.unwrap_or(DEFAULT_ALPHA);
    let grid_n = p.grid.unwrap_or(DEFAULT_GRID);
    let mut m = manifest(&ctx.out_dir, "graph", ctx.seed, &p)?;
    let (t, chans) = read_obs_csv(&obs_path)?;
    let pearson = pearson_corr(&chans)?;
    // events are upward crossings of each channel's own mean
    let events: Vec<Vec<f64>> = chans
        .iter()
        .map(|x| {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            upward_crossings(&t, x, mean).into_iter().map(|e| e - t[0]).collect()
        })
        .collect();
    let window = t[t.len() - 1] - t[0];
    let realization = EventRealization::new(events.clone(), ctx.seed)?;
    let erg = build_adjacency(&[realization], &time_grid(window, grid_n), alpha, !p.no_symmetrize)?;
    let c = chans.len();
    let mut pearson_csv = String::new();
    for row in pearson.chunks(c) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        pearson_csv.push_str(&cells.join(","));
        pearson_csv.push('\n');
    }
    m.emit(&ctx.out_dir.join("pearson.csv"), pearson_csv.as_bytes())?;
    m.emit(&ctx.out_dir.join("erg.csv"), erg.to_csv().as_bytes())?;
    m.emit_json(&ctx.out_dir.join("graph.json"), &GraphReport { pearson, erg, events })?;
    m.finish()
}

pub fn stability(ctx: &Context, flags: &StabilityArgs) -> Result<()> {
    let p: StabilityArgs = ctx.resolve("stability", flags)?;
    let noise_kind = p.noise.unwrap_or(NoiseChoice::Uniform);
    let noise = match noise_kind {
        NoiseChoice::Uniform => NoiseModel::Uniform {
            eps_inf: p.eps.unwrap_or(0.1),
        },
        NoiseChoice::Gaussian => NoiseModel::Gaussian {
            sigma: p.sigma.unwrap_or(0.1),
        },
    };
    let cfg = StabilityConfig {
        channels: p.channels.unwrap_or(4),
        alpha: p.alpha.unwrap_or(DEFAULT_ALPHA),
        noise,
        ms: p.ms.unwrap_or(128),
        trials: p.trials.unwrap_or(1000),
        seed: ctx.seed,
    };
    let check = p.check.unwrap_or(match noise_kind {
        NoiseChoice::Uniform => CheckChoice::Deterministic,
        NoiseChoice::Gaussian => CheckChoice::Tail,
    });
    let mut m = manifest(&ctx.out_dir, "stability", ctx.seed, &json!({ "config": cfg, "check": check }))?;
    let report = match (check, noise) {
        (CheckChoice::Deterministic, _) => deterministic_report(cfg, ctx.exec)?,
        (CheckChoice::Tail, NoiseModel::Gaussian { sigma }) => {
            let grid = default_tau_grid(cfg.alpha, sigma, cfg.ms, 10);
            subgaussian_report(cfg, &grid, ctx.exec)?
        }
        (CheckChoice::Expectation, NoiseModel::Gaussian { .. }) => gaussian_expectation_report(cfg, ctx.exec)?,
        _ => {
            return Err(Error::InvalidParameter(
                "tail and expectation checks need --noise gaussian".into(),
            ))
        }
    };
    log::info!("max deviation {:.3e}, {} violations", report.max_dev, report.violations);
    m.emit_json(&ctx.out_dir.join("stability.json"), &report)?;
    m.emit(&ctx.out_dir.join("stability.csv"), report.to_csv().as_bytes())?;
    m.finish()?;
    report.ensure()
}
