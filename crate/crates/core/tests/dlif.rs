use latent_events::dlif::{
    dlif_density, drive_to_rate, gated_time, rate_to_drive, refractory_gate, sample_renewal, DriveFunction,
    RateFunction, Table, GATE_FLOOR,
};
use latent_events::numerics::{quad_adaptive, Rng};
use proptest::prelude::*;

fn mass(r: &RateFunction) -> f64 {
    let horizon = 60.0 / r.bounds().0;
    quad_adaptive(|t| dlif_density(r, t, 1e-11).unwrap(), 0.0, horizon, 1e-10).unwrap()
}

#[test]
fn densities_normalise_on_bounded_rates() {
    let table = Table::new(vec![0.0, 1.0, 3.0, 6.0], vec![2.0, 0.8, 5.0, 1.2]).unwrap();
    let rates = [
        RateFunction::constant(0.7).unwrap(),
        RateFunction::constant(12.0).unwrap(),
        RateFunction::tabulated(table).unwrap(),
        RateFunction::from_drive(DriveFunction::constant(1.8).unwrap(), (0.5, 40.0)).unwrap(),
        RateFunction::custom(|t| 1.0 + (2.0 * t).cos().abs(), (1.0, 2.0)).unwrap(),
    ];
    for r in &rates {
        let m = mass(r);
        assert!((m - 1.0).abs() < 1e-3, "{r:?}: {m}");
    }
}

#[test]
fn unit_drive_rate() {
    let b = 1.0 / (1.0 - (-1.0f64).exp());
    assert!((drive_to_rate(b).unwrap() - 1.0).abs() < 1e-9);
    assert!(drive_to_rate(1.0).is_err());
    assert!(drive_to_rate(f64::NAN).is_err());
}

#[test]
fn renewal_intervals_are_exponential_in_mean_and_spread() {
    let r = RateFunction::constant(4.0).unwrap();
    let ev = sample_renewal(&r, 5000.0, &mut Rng::new(5)).unwrap();
    let t = ev.channel(0);
    let gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 0.25).abs() < 0.005, "{mean}");
    assert!((var.sqrt() / mean - 1.0).abs() < 0.03, "cv {}", var.sqrt() / mean);
}

#[test]
fn refractory_rate_needs_positive_constant() {
    assert!(RateFunction::constant(2.0).unwrap().with_refractory(0.0).is_err());
    let r = RateFunction::constant(2.0).unwrap().with_refractory(0.05).unwrap();
    assert_eq!(r.refractory(), Some(0.05));
}

#[test]
fn same_seed_same_realization() {
    let r = RateFunction::constant(3.0).unwrap().with_refractory(0.02).unwrap();
    let a = sample_renewal(&r, 20.0, &mut Rng::new(9)).unwrap();
    let b = sample_renewal(&r, 20.0, &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rates_stay_within_bounds(amp in 0.0f64..50.0, freq in 0.1f64..10.0, t in -1.0f64..100.0) {
        let r = RateFunction::custom(move |u| amp * (freq * u).sin(), (0.5, 40.0)).unwrap();
        let v = r.eval(t);
        prop_assert!((0.5..=40.0).contains(&v));
    }

    #[test]
    fn gate_lies_in_unit_interval(t in 0.0f64..10.0, last in 0.0f64..10.0, rho in 1e-3f64..1.0) {
        let g = refractory_gate(t, last, rho);
        prop_assert!(g >= GATE_FLOOR && g <= 1.0);
    }

    #[test]
    fn drive_map_round_trips(r in 0.05f64..200.0) {
        let back = drive_to_rate(rate_to_drive(r)).unwrap();
        prop_assert!((back - r).abs() <= 1e-9 * r);
    }

    #[test]
    fn gated_time_is_below_elapsed(u in 0.0f64..20.0, rho in 1e-3f64..2.0) {
        let g = gated_time(u, rho);
        prop_assert!(g >= 0.0 && g <= u);
    }

    #[test]
    fn realizations_are_strictly_increasing(rate in 0.5f64..30.0, seed in any::<u64>()) {
        let r = RateFunction::constant(rate).unwrap();
        let ev = sample_renewal(&r, 5.0, &mut Rng::new(seed)).unwrap();
        let t = ev.channel(0);
        prop_assert!(t.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(t.iter().all(|x| *x > 0.0 && *x <= 5.0));
    }

    #[test]
    fn constant_density_is_exponential(rate in 0.1f64..20.0, t in 0.0f64..5.0) {
        let r = RateFunction::constant(rate).unwrap();
        let d = dlif_density(&r, t, 1e-10).unwrap();
        prop_assert!((d - rate * (-rate * t).exp()).abs() <= 1e-12 * rate);
    }
}
