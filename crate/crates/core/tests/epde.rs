use latent_events::epde::{
    euler_evolve, evolve_ode, next_event_params, rate_proxy, unroll_events, EpdeConfig, EpdeParams, UnrollMode,
};
use latent_events::melp::SampleMode;
use latent_events::numerics::{softplus_inv, Rng};
use latent_events::Error;
use proptest::prelude::*;

fn config() -> EpdeConfig {
    EpdeConfig {
        feature_dim: 6,
        ..EpdeConfig::default()
    }
}

/// Parameters whose mixture ignores its inputs: every component has mean
/// interval `tau` and scale `s`.
fn fixed(tau: f64, s: f64) -> EpdeParams {
    let p = EpdeParams::zeros(config());
    let mut p = p;
    let k = p.layout.config.k;
    let b = p.store.get_mut(p.layout.head.b);
    b[k..2 * k].iter_mut().for_each(|x| *x = softplus_inv(tau - 1e-4));
    b[2 * k..].iter_mut().for_each(|x| *x = softplus_inv(s - 0.01));
    p
}

#[test]
fn zero_parameters_give_symmetric_mixture() {
    let p = EpdeParams::zeros(config());
    let mix = next_event_params(0.0, &[0.0; 6], &p).unwrap();
    for (w, t) in mix.weights().iter().zip(mix.tau_tilde()) {
        assert!((w - 1.0 / 3.0).abs() < 1e-12);
        assert!((t - (2f64.ln() + 1e-4)).abs() < 1e-12);
    }
}

#[test]
fn renewal_count_concentrates() {
    let p = fixed(0.1, 0.3);
    let feats = vec![vec![0.0; 6]];
    let counts: Vec<usize> = (0..1000)
        .map(|seed| {
            unroll_events(&feats, 1.0, &p, &mut Rng::new(seed), UnrollMode::Sample(SampleMode::Hard))
                .unwrap()
                .events
                .channel(0)
                .len()
        })
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    assert!((mean - 10.0).abs() <= 1.0, "{mean}");
}

#[test]
fn deterministic_limit_steps_by_the_mean() {
    let p = fixed(0.1, 0.011);
    let out = unroll_events(&[vec![0.0; 6]], 1.0, &p, &mut Rng::new(0), UnrollMode::Mean).unwrap();
    let t = out.events.channel(0);
    assert_eq!(t.len(), 10);
    for (i, x) in t.iter().enumerate() {
        assert!((x - 0.1 * (i + 1) as f64).abs() < 1e-9, "{t:?}");
    }
    let r = rate_proxy(&out.mixtures[0]).unwrap();
    assert!((r.eval(0.5) - 10.0).abs() < 1e-9);
}

#[test]
fn far_mixture_emits_nothing() {
    let p = fixed(4.0, 0.011);
    let out = unroll_events(&[vec![0.0; 6]], 2.0, &p, &mut Rng::new(0), UnrollMode::Mean).unwrap();
    assert!(out.events.channel(0).is_empty());
}

#[test]
fn wrong_feature_length_is_a_shape_error() {
    let p = EpdeParams::new(config(), &mut Rng::new(1));
    assert!(matches!(next_event_params(0.0, &[0.0; 5], &p), Err(Error::Shape(_))));
    assert!(matches!(evolve_ode(&[0.0; 7], 0.0, 1.0, &p), Err(Error::Shape(_))));
}

#[test]
fn euler_is_first_order() {
    let err = |n: usize| (euler_evolve(|y| vec![0.0; y.len()], &[1.0], 1.0, 0.0, 1.0, n).unwrap()[0] - 1f64.exp()).abs();
    let ratio = err(1000) / err(2000);
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    let y = euler_evolve(|y| vec![0.0; y.len()], &[1.0], 1.0, 0.0, 1.0, 1000).unwrap()[0];
    assert!((y - 2.7169).abs() < 1e-4, "{y}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_mixtures_are_valid(seed in any::<u64>(), prev in 0.0f64..5.0) {
        let mut rng = Rng::new(seed);
        let p = EpdeParams::new(config(), &mut rng);
        let feats: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mix = next_event_params(prev, &feats, &p).unwrap();
        prop_assert!((mix.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(mix.tau_tilde().iter().all(|t| *t >= 1e-4));
        prop_assert!(mix.scales().iter().all(|s| *s >= 0.01));
    }

    #[test]
    fn unrolled_events_are_ordered_and_inside(seed in any::<u64>(), window in 0.2f64..3.0) {
        let mut rng = Rng::new(seed);
        let p = EpdeParams::new(config(), &mut rng);
        let feats: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let mode = UnrollMode::Sample(SampleMode::Relaxed { temperature: 0.5 });
        let out = unroll_events(&feats, window, &p, &mut rng, mode).unwrap();
        for c in out.events.channels() {
            prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(c.iter().all(|t| *t > 0.0 && *t <= window));
        }
    }
}
