//! Evaluation harness: reconstruction cosine, inferred rates with bootstrap
//! intervals, band IoU, event-time scatter and classification scores.

use serde::{Deserialize, Serialize};

use super::model::{Model, Prediction};
use crate::dlif::Table;
use crate::numerics::Rng;
use crate::par::Exec;
use crate::toygen::{BandSpec, ToyRecord};
use crate::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Anything that maps a record to a deterministic prediction.
pub trait RateModel: Sync {
    fn predict_record(&self, rec: &ToyRecord) -> Result<Prediction>;
}

impl RateModel for Model {
    fn predict_record(&self, rec: &ToyRecord) -> Result<Prediction> {
        self.predict(&rec.obs)
    }
}

/// Frozen model with one constant rate and a zero reconstruction, the
/// signature of a collapsed latent ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRateModel {
    pub rate: f64,
    pub classes: usize,
}

impl RateModel for ConstantRateModel {
    fn predict_record(&self, rec: &ToyRecord) -> Result<Prediction> {
        let n = rec.obs.len();
        Ok(Prediction {
            recon: vec![0.0; n],
            times: (1..=n).map(|i| i as f64 / self.rate).collect(),
            step_means: vec![1.0 / self.rate; n],
            prior_rate: self.rate,
            class_probs: vec![1.0 / self.classes as f64; self.classes],
        })
    }
}

/// Reads the generating truth back out of each record.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    pub classes: Vec<String>,
}

impl RateModel for OracleModel {
    fn predict_record(&self, rec: &ToyRecord) -> Result<Prediction> {
        let n = rec.obs.len();
        Ok(Prediction {
            recon: rec.obs.clone(),
            times: rec.times.clone(),
            step_means: vec![1.0 / rec.rate; n],
            prior_rate: rec.rate,
            class_probs: self.classes.iter().map(|c| if *c == rec.band { 1.0 } else { 0.0 }).collect(),
        })
    }
}

/// Cosine similarity; zero when either vector vanishes.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Intersection over union of two closed intervals. Identical points give 1.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 50.0)
}

/// Percentile-bootstrap 95% interval of the median.
pub fn bootstrap_median_ci(xs: &[f64], resamples: usize, rng: &mut Rng) -> (f64, f64) {
    let n = xs.len();
    let mut meds = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; n];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = xs[rng.below(n)];
        }
        meds.push(median(&buf));
    }
    meds.sort_by(f64::total_cmp);
    (percentile(&meds, 2.5), percentile(&meds, 97.5))
}

/// Time average of the step-rate proxy over `[0, last predicted event]`.
pub fn inferred_rate(pred: &Prediction) -> Result<f64> {
    let end = *pred.times.last().ok_or_else(|| Error::InvalidParameter("prediction has no events".into()))?;
    let mut centres = Vec::with_capacity(pred.times.len());
    let mut prev = 0.0;
    for &t in &pred.times {
        centres.push(0.5 * (prev + t));
        prev = t;
    }
    let rates = pred.step_means.iter().map(|m| 1.0 / m).collect();
    let table = Table::new(centres, rates)?;
    Ok(table.integral_to(end) / end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEval {
    pub index: usize,
    pub band: String,
    pub true_rate: f64,
    pub inferred_rate: f64,
    pub cs: f64,
    pub predicted_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEval {
    pub band: String,
    pub lo: f64,
    pub hi: f64,
    pub records: usize,
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPair {
    pub record: usize,
    pub index: usize,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_cs: f64,
    pub bands: Vec<BandEval>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub records: Vec<RecordEval>,
    pub scatter: Vec<ScatterPair>,
}

impl EvalReport {
    pub fn band(&self, name: &str) -> Option<&BandEval> {
        self.bands.iter().find(|b| b.band == name)
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("record,index,predicted,truth\n");
        for p in &self.scatter {
            out.push_str(&format!("{},{},{},{}\n", p.record, p.index, p.predicted, p.truth));
        }
        out
    }

    pub fn rates_csv(&self) -> String {
        let mut out = String::from("record,band,true_rate,inferred_rate,cs\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.index, r.band, r.true_rate, r.inferred_rate, r.cs));
        }
        out
    }
}

/// Macro-averaged F1 over `classes` labels.
pub fn macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        total += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
    }
    total / classes as f64
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) })
        .0
}

pub fn evaluate(model: &dyn RateModel, records: &[ToyRecord], bands: &[BandSpec], seed: u64, exec: Exec) -> Result<EvalReport> {
    let classes: Vec<&str> = bands.iter().map(|b| b.name.as_str()).collect();
    let preds = exec.try_map_range(records.len(), |i| model.predict_record(&records[i]))?;
    let mut evals = Vec::with_capacity(records.len());
    let mut scatter = Vec::new();
    for (i, (rec, pred)) in records.iter().zip(&preds).enumerate() {
        evals.push(RecordEval {
            index: i,
            band: rec.band.clone(),
            true_rate: rec.rate,
            inferred_rate: inferred_rate(pred)?,
            cs: cosine(&pred.recon, &rec.obs),
            predicted_class: argmax(&pred.class_probs),
        });
        for (k, (p, t)) in pred.times.iter().zip(&rec.times).enumerate() {
            scatter.push(ScatterPair {
                record: i,
                index: k,
                predicted: *p,
                truth: *t,
            });
        }
    }
    let root = Rng::new(seed);
    let mut band_evals = Vec::with_capacity(bands.len());
    for (b, band) in bands.iter().enumerate() {
        let mut rates: Vec<f64> = evals.iter().filter(|e| e.band == band.name).map(|e| e.inferred_rate).collect();
        if rates.is_empty() {
            return Err(Error::EmptyBand(band.name.clone()));
        }
        rates.sort_by(f64::total_cmp);
        let med = percentile(&rates, 50.0);
        let (ci_lo, ci_hi) = bootstrap_median_ci(&rates, BOOTSTRAP_RESAMPLES, &mut root.split(b as u64));
        let (p_lo, p_hi) = (percentile(&rates, 2.5), percentile(&rates, 97.5));
        band_evals.push(BandEval {
            band: band.name.clone(),
            lo: band.lo,
            hi: band.hi,
            records: rates.len(),
            median: med,
            ci_lo: ci_lo.min(med),
            ci_hi: ci_hi.max(med),
            p_lo,
            p_hi,
            iou: interval_iou((band.lo, band.hi), (p_lo, p_hi)),
        });
    }
    let truth: Vec<usize> = records
        .iter()
        .map(|r| classes.iter().position(|c| *c == r.band).unwrap_or(usize::MAX))
        .collect();
    let pred: Vec<usize> = evals.iter().map(|e| e.predicted_class).collect();
    let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
    let n = records.len().max(1) as f64;
    Ok(EvalReport {
        mean_cs: evals.iter().map(|e| e.cs).sum::<f64>() / n,
        bands: band_evals,
        accuracy: correct as f64 / n,
        macro_f1: macro_f1(&truth, &pred, classes.len()),
        records: evals,
        scatter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        assert_eq!(interval_iou((5.0, 10.0), (5.0, 10.0)), 1.0);
        assert_eq!(interval_iou((5.0, 10.0), (11.0, 12.0)), 0.0);
        assert_eq!(interval_iou((5.0, 10.0), (1.0, 1.0)), 0.0);
        assert!((interval_iou((0.0, 2.0), (1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(interval_iou((1.0, 3.0), (0.0, 2.0)), interval_iou((0.0, 2.0), (1.0, 3.0)));
    }

    #[test]
    fn percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn f1_perfect_and_empty_class() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        assert!((macro_f1(&[0, 0, 1], &[0, 0, 0], 3) - (0.8 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_proxy_rate() {
        let pred = ConstantRateModel { rate: 1.0, classes: 3 }
            .predict_record(&ToyRecord {
                rate: 7.0,
                times: vec![0.1; 20],
                obs: vec![0.0; 20],
                band: "low".into(),
                split: crate::toygen::Split::Test,
                seed: 0,
            })
            .unwrap();
        assert!((inferred_rate(&pred).unwrap() - 1.0).abs() < 1e-12);
    }
}
