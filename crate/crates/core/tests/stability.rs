use latent_events::par::Exec;
use latent_events::stability::{
    default_tau_grid, deterministic_report, gaussian_expectation_bound, gaussian_expectation_report,
    run_deterministic_check, subgaussian_report, tail_bound, NoiseModel, StabilityConfig,
};
use proptest::prelude::*;

fn uniform(channels: usize, alpha: f64, eps_inf: f64, ms: usize, trials: usize) -> StabilityConfig {
    StabilityConfig {
        channels,
        alpha,
        noise: NoiseModel::Uniform { eps_inf },
        ms,
        trials,
        seed: 11,
    }
}

fn gaussian(channels: usize, alpha: f64, sigma: f64, ms: usize, trials: usize) -> StabilityConfig {
    StabilityConfig {
        noise: NoiseModel::Gaussian { sigma },
        ..uniform(channels, alpha, 0.0, ms, trials)
    }
}

#[test]
fn zero_noise_gives_zero_deviation() {
    let rep = run_deterministic_check(uniform(4, 2.0, 0.0, 16, 50), Exec::Parallel).unwrap();
    assert_eq!(rep.max_dev, 0.0);
}

#[test]
fn bounded_noise_stays_under_entry_bound() {
    let rep = run_deterministic_check(uniform(4, 1.0, 0.1, 128, 1000), Exec::Parallel).unwrap();
    assert_eq!(rep.violations, 0);
    assert!(rep.max_dev <= 0.1);
    // averaging keeps the worst case well inside
    assert!(rep.max_dev < 0.05, "{}", rep.max_dev);
}

#[test]
fn frobenius_bound_at_nineteen_channels() {
    let rep = run_deterministic_check(uniform(19, 2.0, 0.5, 32, 200), Exec::Parallel).unwrap();
    let bound = 2.0 * 0.5 * (19.0f64 * 18.0).sqrt();
    assert!(rep.records.iter().all(|r| r.frob_dev <= bound && r.frob_bound == Some(bound)));
}

#[test]
fn tail_bound_values() {
    assert_eq!(tail_bound(0.0, 128, 1.0, 0.1), 2.0);
    let b = tail_bound(0.05, 128, 1.0, 0.1);
    assert!((b / (2.0 * (-16.0f64).exp()) - 1.0).abs() < 1e-12);
    assert!((tail_bound(0.05, 256, 1.0, 0.1) - b * b / 2.0).abs() < 1e-20);
}

#[test]
fn tail_frequencies_respect_bound_and_fall_with_ms() {
    let taus = [0.0, 0.01, 0.02, 0.04];
    let small = subgaussian_report(gaussian(4, 1.0, 0.1, 32, 2000), &taus, Exec::Parallel).unwrap();
    let large = subgaussian_report(gaussian(4, 1.0, 0.1, 64, 2000), &taus, Exec::Parallel).unwrap();
    assert!(small.tail[0].empirical <= 1.0);
    for (a, b) in small.tail.iter().zip(&large.tail) {
        assert!(!a.violation && !b.violation, "{a:?} {b:?}");
        assert!(b.empirical <= a.empirical + 3.0 * a.std_err.max(1e-3), "{a:?} {b:?}");
    }
}

#[test]
fn tail_grid_holds_on_default_grid() {
    let grid = default_tau_grid(2.0, 0.5, 32, 10);
    assert_eq!(grid.len(), 10);
    let rep = subgaussian_report(gaussian(4, 2.0, 0.5, 32, 1000), &grid, Exec::Parallel).unwrap();
    assert!(rep.tail.iter().all(|r| !r.violation), "{:?}", rep.tail);
}

#[test]
fn single_sample_expectation_approaches_half_normal_mean() {
    let bound = gaussian_expectation_bound(1.0, 1.0);
    assert!((bound - 0.797_884_560_8).abs() < 1e-9);
    let rep = gaussian_expectation_report(gaussian(4, 1.0, 1.0, 1, 4000), Exec::Parallel).unwrap();
    let e = rep.expectation.unwrap();
    assert!(!e.violation);
    assert!(e.entry_mean <= e.entry_bound + 3.0 * e.entry_se);
    assert!(e.frob_mean <= e.frob_bound + 3.0 * e.frob_se);
}

#[test]
fn averaging_contracts_like_inverse_root_ms() {
    let mean = |ms| {
        let rep = gaussian_expectation_report(gaussian(4, 1.0, 0.05, ms, 2000), Exec::Parallel).unwrap();
        rep.expectation.unwrap().entry_mean
    };
    let (m16, m64) = (mean(16), mean(64));
    let ratio = m64 / m16;
    assert!((0.4..=0.6).contains(&ratio), "{m16} -> {m64}: {ratio}");
    assert!(m64 <= gaussian_expectation_bound(1.0, 0.05));
}

#[test]
fn reports_are_reproducible_and_exec_independent() {
    let cfg = uniform(5, 1.5, 0.2, 16, 100);
    let a = deterministic_report(cfg, Exec::Parallel).unwrap();
    let b = deterministic_report(cfg, Exec::Sequential).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(deterministic_report(uniform(1, 1.0, 0.1, 4, 4), Exec::Sequential).is_err());
    assert!(deterministic_report(uniform(3, 0.0, 0.1, 4, 4), Exec::Sequential).is_err());
    assert!(deterministic_report(uniform(3, 1.0, -0.1, 4, 4), Exec::Sequential).is_err());
    assert!(deterministic_report(gaussian(3, 1.0, 0.1, 4, 4), Exec::Sequential).is_err());
    assert!(subgaussian_report(uniform(3, 1.0, 0.1, 4, 4), &[0.1], Exec::Sequential).is_err());
    assert!(gaussian_expectation_report(gaussian(3, 1.0, 0.0, 4, 4), Exec::Sequential).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deterministic_bounds_always_hold(
        c in 2usize..10,
        alpha in 0.1f64..8.0,
        eps in 0.0f64..1.0,
        ms in 1usize..64,
        seed in any::<u64>(),
    ) {
        let cfg = StabilityConfig { seed, ..uniform(c, alpha, eps, ms, 20) };
        let rep = deterministic_report(cfg, Exec::Sequential).unwrap();
        prop_assert_eq!(rep.violations, 0);
        prop_assert!(rep.records.iter().all(|r| r.avg_entry_excess <= 1e-12));
    }
}
