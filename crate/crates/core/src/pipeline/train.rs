//! Training loop with annealed relaxed sampling, plateau learning-rate
//! halving and best-by-validation-accuracy checkpointing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::model::{Model, ModelConfig};
use super::objective::{make_groups, objective, Components, ObjectiveWeights, Sampling};
use crate::numerics::{AdamConfig, AdamState, Rng};
use crate::par::Exec;
use crate::toygen::{BandSpec, ToyRecord};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: ObjectiveWeights,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Records per group; above 1 the graph term is active.
    pub channels: usize,
    pub seed: u64,
    /// Epochs without validation-accuracy gain before the rate is halved.
    pub plateau: usize,
    pub temperature: f64,
    pub anneal: f64,
    pub min_temperature: f64,
    pub divergence: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: ObjectiveWeights::default(),
            // desk batches are 16x smaller than the reference setting
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            clip_norm: 1.0,
            epochs: 30,
            batch: 64,
            channels: 1,
            seed: 0,
            plateau: 15,
            temperature: 0.5,
            anneal: 0.95,
            min_temperature: 0.1,
            divergence: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        (self.temperature * self.anneal.powi(epoch as i32)).max(self.min_temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub temperature: f64,
    pub train: Components,
    pub val: Components,
    pub val_accuracy: f64,
    pub grad_norm: f64,
    /// Running minimum of the validation loss.
    pub best_val_loss: f64,
    pub best_val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,temperature,train_loss,val_loss,val_accuracy,grad_norm,best_val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch, e.lr, e.temperature, e.train.total, e.val.total, e.val_accuracy, e.grad_norm, e.best_val_loss
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub val_accuracy: f64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json("checkpoint", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidParameter(format!("unsupported checkpoint version {}", ck.version)));
        }
        let fresh = Model::new(ck.model.config.clone(), 0);
        fresh.store.check_layout(&ck.model.store)?;
        Ok(ck)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub val_report: EvalReport,
    /// Parameters after the final epoch.
    pub last: Model,
}

fn check_loss(epoch: usize, loss: f64, limit: f64) -> Result<()> {
    if !loss.is_finite() || loss > limit {
        return Err(Error::TrainingDiverged { epoch, loss });
    }
    Ok(())
}

/// Trains from scratch; the returned checkpoint is the epoch with the best
/// validation accuracy (lower validation loss breaks ties).
pub fn train_toy(
    cfg: &TrainConfig,
    train: &[ToyRecord],
    val: &[ToyRecord],
    bands: &[BandSpec],
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.weights.validate()?;
    cfg.model.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidParameter("training needs nonempty train and validation splits".into()));
    }
    if cfg.batch == 0 || cfg.channels == 0 {
        return Err(Error::InvalidParameter("batch and channels must be positive".into()));
    }
    let mut model = Model::new(cfg.model.clone(), cfg.seed);
    let mut adam = AdamState::new(cfg.adam, model.store.tensors().iter().map(Vec::len));
    let root = Rng::new(cfg.seed);
    let val_refs: Vec<&ToyRecord> = val.iter().collect();
    let val_groups = make_groups(&val_refs, cfg.channels);

    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64, Checkpoint, EvalReport)> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_gain = 0;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let temperature = cfg.temperature_at(epoch);
        let mut order: Vec<&ToyRecord> = train.iter().collect();
        root.split(epoch as u64).shuffle(&mut order);
        let groups = make_groups(&order, cfg.channels);
        let mut train_comps = Components::default();
        let mut norm_sum = 0.0;
        let per_batch = cfg.batch.div_ceil(cfg.channels).max(1);
        let batches: Vec<&[Vec<&ToyRecord>]> = groups.chunks(per_batch).collect();
        for batch in &batches {
            let res = objective(
                batch,
                &model,
                &cfg.weights,
                Some(Sampling {
                    rng_key: step,
                    seed: cfg.seed,
                    temperature,
                }),
                true,
                exec,
            )?;
            check_loss(epoch, res.loss, cfg.divergence)?;
            norm_sum += adam.step(model.store.tensors_mut(), &res.grads, cfg.clip_norm)?;
            train_comps.add_scaled(&res.components, 1.0 / batches.len() as f64);
            step += 1;
        }
        let val_res = objective(&val_groups, &model, &cfg.weights, None, false, exec)?;
        check_loss(epoch, val_res.loss, cfg.divergence)?;
        let report = evaluate(&model, val, bands, cfg.seed, exec)?;
        best_loss = best_loss.min(val_res.loss);

        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => report.accuracy > *acc || (report.accuracy == *acc && val_res.loss < *loss),
        };
        let acc_gain = best.as_ref().map_or(true, |(acc, _, _, _)| report.accuracy > *acc);
        if acc_gain {
            since_gain = 0;
        } else {
            since_gain += 1;
            if since_gain >= cfg.plateau {
                adam.set_lr(adam.lr() * 0.5);
                since_gain = 0;
            }
        }
        if improved {
            let ck = Checkpoint {
                version: CHECKPOINT_VERSION,
                model: model.clone(),
                train: Some(cfg.clone()),
                epoch,
                val_accuracy: report.accuracy,
            };
            best = Some((report.accuracy, val_res.loss, ck, report.clone()));
        }
        let entry = EpochLog {
            epoch,
            lr: adam.lr(),
            temperature,
            train: train_comps,
            val: val_res.components,
            val_accuracy: report.accuracy,
            grad_norm: norm_sum / batches.len() as f64,
            best_val_loss: best_loss,
            best_val_accuracy: best.as_ref().map_or(0.0, |b| b.0),
        };
        log::info!(
            "epoch {epoch} loss {:.4} val {:.4} acc {:.3} cs {:.3} lr {:.2e}",
            entry.train.total,
            entry.val.total,
            entry.val_accuracy,
            report.mean_cs,
            entry.lr
        );
        log.epochs.push(entry);
    }
    let (_, _, checkpoint, val_report) = best.ok_or_else(|| Error::InvalidParameter("zero training epochs".into()))?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        val_report,
        last: model,
    })
}
