use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use latent_events::par::Exec;
use latent_events::pipeline::{make_groups, objective, Model, ModelConfig, ObjectiveWeights, Sampling};
use latent_events::stability::{deterministic_report, NoiseModel, StabilityConfig};
use latent_events::toygen::{gen_dataset, GenConfig, Split};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn batch_objective(c: &mut Criterion) {
    let data = gen_dataset(&GenConfig::desk(0), Exec::Sequential).unwrap();
    let records: Vec<_> = data.split(Split::Train).iter().take(64).collect();
    let groups = make_groups(&records, 1);
    let model = Model::new(ModelConfig::default(), 0);
    let weights = ObjectiveWeights::default();
    let sampling = Sampling {
        seed: 0,
        rng_key: 1,
        temperature: 0.5,
    };
    let mut g = c.benchmark_group("objective_batch64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| objective(&groups, &model, &weights, Some(sampling), true, exec).unwrap())
        });
    }
    g.finish();
}

fn stability_trials(c: &mut Criterion) {
    let cfg = StabilityConfig {
        channels: 8,
        alpha: 2.0,
        noise: NoiseModel::Uniform { eps_inf: 0.1 },
        ms: 128,
        trials: 200,
        seed: 0,
    };
    let mut g = c.benchmark_group("stability_200_trials");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| deterministic_report(cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn dataset(c: &mut Criterion) {
    let mut g = c.benchmark_group("gen_desk_dataset");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gen_dataset(&GenConfig::desk(0), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, batch_objective, stability_trials, dataset);
criterion_main!(benches);
