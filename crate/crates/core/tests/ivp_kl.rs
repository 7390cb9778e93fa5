use latent_events::dlif::RateFunction;
use latent_events::ivp_kl::{kl_bound, kl_integrand_g, kl_oracle, random_battery, KlProblem, QFamily, TRAIN_EPS, TRAIN_ODE_STEPS};
use latent_events::numerics::quad_adaptive;
use proptest::prelude::*;

fn exp_pair(q: f64, r: f64, eps: f64) -> KlProblem {
    KlProblem::new(QFamily::Exponential { rate: q }, RateFunction::constant(r).unwrap(), 10.0, eps).unwrap()
}

/// `KL(Exp(a) truncated to [0, S] || Exp(b))` in closed form.
fn truncated_exp_kl(a: f64, b: f64, s: f64) -> f64 {
    let z = -(-a * s).exp_m1();
    let mean = 1.0 / a - s * (-a * s).exp() / z;
    (a / b).ln() - z.ln() - (a - b) * mean
}

#[test]
fn battery_bound_dominates_oracle() {
    for seed in [1, 2] {
        for p in random_battery(20, 10.0, 1e-5, seed).unwrap() {
            let u = kl_bound(&p, 4096).unwrap().u_eps;
            let o = kl_oracle(&p, 1e-10).unwrap();
            assert!(u >= o - 1e-6, "{p:?}: U = {u}, oracle = {o}");
            assert!(u - o < 1e-4, "{p:?}: U = {u}, oracle = {o}");
        }
    }
}

#[test]
fn slow_q_against_fast_prior_keeps_its_tail() {
    // most of the divergence sits at large t, where m crowds against zero
    let p = exp_pair(0.3, 6.0, 1e-5);
    let u = kl_bound(&p, 2048).unwrap().u_eps;
    let exact = truncated_exp_kl(0.3, 6.0, 10.0);
    assert!(u >= exact - 1e-6 && u - exact < 1e-4, "U = {u}, exact = {exact}");
}

#[test]
fn training_surrogate_gap_is_small() {
    // training windows are 5 s, so -ln(eps) covers the whole horizon
    for p in random_battery(20, 5.0, TRAIN_EPS, 3).unwrap() {
        let u = kl_bound(&p, TRAIN_ODE_STEPS).unwrap().u_eps;
        let o = kl_oracle(&p, 1e-10).unwrap();
        assert!(u >= o - 1e-4 && u - o < 0.01 * o.max(1e-3), "{p:?}: U = {u}, oracle = {o}");
    }
}

#[test]
fn exponential_pair_against_closed_form() {
    let exact = truncated_exp_kl(2.0, 1.0, 10.0);
    let o = kl_oracle(&exp_pair(2.0, 1.0, 1e-5), 1e-12).unwrap();
    assert!((o - exact).abs() < 1e-9, "{o} vs {exact}");
    let u = kl_bound(&exp_pair(2.0, 1.0, 1e-5), 4096).unwrap().u_eps;
    assert!((u - 0.19315).abs() <= 1e-3);
}

#[test]
fn eps_sweep_approaches_oracle() {
    let o = kl_oracle(&exp_pair(2.0, 1.0, 1e-5), 1e-12).unwrap();
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&eps| kl_bound(&exp_pair(2.0, 1.0, eps), 4096).unwrap().u_eps - o)
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{gaps:?}");
    assert!(gaps[3].abs() < 1e-6, "{gaps:?}");
}

#[test]
fn change_of_variables_preserves_integral() {
    let p = exp_pair(1.5, 2.5, 1e-7);
    let in_m = quad_adaptive(|m| kl_integrand_g(m, &p).unwrap(), -1.0, -(-10.0f64).exp(), 1e-12).unwrap();
    let in_t = kl_oracle(&p, 1e-12).unwrap();
    assert!((in_m - in_t).abs() < 1e-8, "{in_m} vs {in_t}");
}

#[test]
fn rk4_converges_with_steps() {
    let p = exp_pair(2.0, 1.0, 1e-5);
    let o = kl_oracle(&p, 1e-12).unwrap();
    let coarse = (kl_bound(&p, 64).unwrap().u_eps - o).abs();
    let fine = (kl_bound(&p, 4096).unwrap().u_eps - o).abs();
    assert!(fine <= coarse);
    assert!(fine < 1e-8);
}

#[test]
fn invalid_problems_are_rejected() {
    let r = || RateFunction::constant(1.0).unwrap();
    assert!(KlProblem::new(QFamily::Exponential { rate: 1.0 }, r(), 10.0, 0.0).is_err());
    assert!(KlProblem::new(QFamily::Exponential { rate: 1.0 }, r(), 10.0, 1.0).is_err());
    assert!(KlProblem::new(QFamily::Exponential { rate: 1.0 }, r(), -1.0, 1e-3).is_err());
    assert!(kl_bound(&exp_pair(1.0, 1.0, 1e-3), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bound_is_nonnegative_and_dominates(q in 0.3f64..6.0, r in 0.3f64..6.0, eps in 1e-6f64..1e-4) {
        let p = exp_pair(q, r, eps);
        let u = kl_bound(&p, 2048).unwrap().u_eps;
        let o = kl_oracle(&p, 1e-11).unwrap();
        prop_assert!(o >= -1e-9);
        prop_assert!(u >= o - 1e-6, "U = {}, oracle = {}", u, o);
    }

    #[test]
    fn oracle_matches_closed_form(q in 0.3f64..6.0, r in 0.3f64..6.0) {
        let o = kl_oracle(&exp_pair(q, r, 1e-3), 1e-12).unwrap();
        let exact = truncated_exp_kl(q, r, 10.0);
        prop_assert!((o - exact).abs() < 1e-8, "{} vs {}", o, exact);
    }
}
