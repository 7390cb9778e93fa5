use latent_events::par::Exec;
use latent_events::pipeline::{
    evaluate, make_groups, objective, train_toy, Checkpoint, ConstantRateModel, Model, ModelConfig, ObjectiveWeights,
    OracleModel, Sampling, TrainConfig,
};
use latent_events::toygen::{gen_dataset, BandSpec, GenConfig, SplitCounts, ToyRecord};
use latent_events::Error;

fn small_data(seed: u64) -> latent_events::toygen::Dataset {
    let cfg = GenConfig {
        counts: SplitCounts {
            train: 2,
            val: 1,
            test: 2,
            seqs: 3,
        },
        ..GenConfig::desk(seed)
    };
    gen_dataset(&cfg, Exec::Sequential).unwrap()
}

fn only(component: &str) -> ObjectiveWeights {
    let mut w = ObjectiveWeights {
        ce: 0.0,
        kl: 0.0,
        beta: 0.0,
        lif: 0.0,
        aux: 0.0,
    };
    match component {
        "ce" => w.ce = 1.0,
        "kl" => w.kl = 1.0,
        "lif" => w.lif = 1.0,
        "aux" => w.aux = 1.0,
        "beta" => w.beta = 1.0,
        _ => unreachable!(),
    }
    w
}

#[test]
fn untrained_classifier_is_near_uniform() {
    let data = small_data(1);
    let refs: Vec<&ToyRecord> = data.train.iter().collect();
    let groups = make_groups(&refs, 1);
    let model = Model::new(ModelConfig::default(), 0);
    let r = objective(&groups, &model, &only("ce"), None, false, Exec::Sequential).unwrap();
    assert!((r.loss - 3f64.ln()).abs() < 0.1, "{}", r.loss);
}

#[test]
fn total_is_weighted_sum_of_components() {
    let data = small_data(2);
    let refs: Vec<&ToyRecord> = data.train.iter().collect();
    let model = Model::new(ModelConfig::default(), 3);
    let w = ObjectiveWeights::default();
    for channels in [1, 2] {
        let groups = make_groups(&refs, channels);
        let sampling = Sampling {
            rng_key: 0,
            seed: 4,
            temperature: 0.5,
        };
        let r = objective(&groups, &model, &w, Some(sampling), false, Exec::Sequential).unwrap();
        let c = r.components;
        assert!((c.weighted_total(&w) - c.total).abs() <= 1e-9 * c.total.abs().max(1.0), "{c:?}");
        assert!(c.kl_t >= -1e-9 && c.kl_tau >= -1e-9 && c.lif >= 0.0 && c.recon >= 0.0);
        if channels == 1 {
            assert_eq!(c.erg, 0.0);
        }
    }
}

/// Central differences of each weighted component along a few parameter
/// coordinates.
#[test]
fn each_component_matches_finite_differences() {
    let data = small_data(5);
    let refs: Vec<&ToyRecord> = data.train.iter().take(4).collect();
    let model = Model::new(ModelConfig::default(), 6);
    let sampling = Some(Sampling {
        rng_key: 1,
        seed: 2,
        temperature: 0.5,
    });
    let h = 1e-6;
    for (component, channels) in [("ce", 1), ("aux", 1), ("kl", 1), ("lif", 1), ("beta", 2)] {
        let w = only(component);
        let groups = make_groups(&refs, channels);
        let base = objective(&groups, &model, &w, sampling, true, Exec::Sequential).unwrap();
        let mut worst = 0.0f64;
        let mut checked = 0;
        for (t, g) in base.grads.iter().enumerate() {
            // the largest-gradient coordinate of each tensor that the term reaches
            let Some((k, _)) = g.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) else {
                continue;
            };
            if g[k].abs() < 1e-6 {
                continue;
            }
            let mut probe = model.clone();
            let x = probe.store.tensors()[t][k];
            probe.store.tensors_mut()[t][k] = x + h;
            let up = objective(&groups, &probe, &w, sampling, false, Exec::Sequential).unwrap().loss;
            probe.store.tensors_mut()[t][k] = x - h;
            let down = objective(&groups, &probe, &w, sampling, false, Exec::Sequential).unwrap().loss;
            let numeric = (up - down) / (2.0 * h);
            let err = (g[k] - numeric).abs() / g[k].abs().max(numeric.abs());
            worst = worst.max(err);
            checked += 1;
        }
        assert!(checked > 0, "{component}: no parameter reaches the term");
        assert!(worst < 1e-3, "{component}: relative error {worst}");
    }
}

#[test]
fn checkpoint_round_trip_reproduces_report() {
    let data = small_data(7);
    let bands = BandSpec::all();
    let cfg = TrainConfig {
        epochs: 1,
        batch: 8,
        ..TrainConfig::default()
    };
    let out = train_toy(&cfg, &data.train, &data.val, &bands, Exec::Sequential).unwrap();
    let dir = std::env::temp_dir().join(format!("latent-events-ckpt-{}", std::process::id()));
    let path = dir.join("ckpt.json");
    std::fs::create_dir_all(&dir).unwrap();
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(loaded.model.store, out.checkpoint.model.store);
    let a = evaluate(&out.checkpoint.model, &data.test, &bands, 3, Exec::Sequential).unwrap();
    let b = evaluate(&loaded.model, &data.test, &bands, 3, Exec::Sequential).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn checkpoint_with_wrong_layout_is_rejected() {
    let model = Model::new(ModelConfig::default(), 0);
    let mut text = serde_json::to_value(Checkpoint {
        version: latent_events::pipeline::train::CHECKPOINT_VERSION,
        model,
        train: None,
        epoch: 0,
        val_accuracy: 0.0,
    })
    .unwrap();
    text["model"]["config"]["enc_hidden"] = serde_json::json!(7);
    let dir = std::env::temp_dir().join(format!("latent-events-bad-{}", std::process::id()));
    let path = dir.join("ckpt.json");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(&path, text.to_string()).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    std::fs::remove_dir_all(&dir).ok();
    assert!(matches!(err, Error::Shape(_)), "{err}");
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let data = small_data(9);
    let bands = BandSpec::all();
    let cfg = TrainConfig {
        epochs: 2,
        batch: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train_toy(&cfg, &data.train, &data.val, &bands, Exec::Parallel).unwrap();
    let b = train_toy(&cfg, &data.train, &data.val, &bands, Exec::Sequential).unwrap();
    assert_eq!(a.log.epochs.len(), 2);
    assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
    assert_eq!(a.checkpoint.model.store, b.checkpoint.model.store);
    let best: Vec<f64> = a.log.epochs.iter().map(|e| e.best_val_loss).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn collapsed_model_has_no_overlap() {
    let data = small_data(11);
    let bands = BandSpec::all();
    let model = ConstantRateModel {
        rate: 1.0,
        classes: bands.len(),
    };
    let r = evaluate(&model, &data.test, &bands, 0, Exec::Sequential).unwrap();
    for b in &r.bands {
        assert_eq!(b.iou, 0.0);
        assert!((b.median - 1.0).abs() < 1e-9);
    }
    assert_eq!(r.mean_cs, 0.0);
}

#[test]
fn oracle_model_recovers_bands() {
    let data = small_data(12);
    let bands = BandSpec::all();
    let model = OracleModel {
        classes: bands.iter().map(|b| b.name.clone()).collect(),
    };
    let r = evaluate(&model, &data.test, &bands, 0, Exec::Sequential).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert!((r.mean_cs - 1.0).abs() < 1e-12);
    for b in &r.bands {
        assert!(b.median >= b.lo && b.median <= b.hi, "{b:?}");
        assert!(b.iou > 0.0);
    }
}

#[test]
fn empty_band_is_an_error() {
    let data = small_data(13);
    let low: Vec<ToyRecord> = data.test.iter().filter(|r| r.band == "low").cloned().collect();
    let model = ConstantRateModel { rate: 1.0, classes: 3 };
    let err = evaluate(&model, &low, &BandSpec::all(), 0, Exec::Sequential).unwrap_err();
    assert!(matches!(err, Error::EmptyBand(_)), "{err}");
}
