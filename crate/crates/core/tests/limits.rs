use herding_market::analytics::{
    record_series, regime_case, summarize_ensemble, uniform_grid, EnsembleMember, Regime, DEFAULT_LEVELS,
};
use herding_market::coefficients::ExtendedLimit;
use herding_market::engine::{simulate_trajectory, Simulator};
use herding_market::integrators::{
    extended_limit_sde, integrate_ode, integrate_sde, integrate_sde_with, interpolate, pure_limit_ode,
    BrownianIncrements, InitialCondition, DEFAULT_STEP,
};
use herding_market::lux::{build_pure, pure_opinion, tanh_fixed_point, LuxPureParams};
use herding_market::{derive_seed, rng_from_seed};

#[test]
fn stable_market_sde_settles_at_fundamental() {
    let p = regime_case(Regime::SingleStable);
    let lim = ExtendedLimit::from_params(&p);
    let sde = extended_limit_sde(&lim, InitialCondition::Fixed(vec![48.0, 0.0]), 1000.0);
    for seed in 0..3 {
        let path = integrate_sde(&sde, DEFAULT_STEP, seed).unwrap();
        let (mut area, mut span) = (0.0, 0.0);
        for (w, x) in path.times.windows(2).zip(path.values.iter()) {
            if w[0] >= 500.0 {
                area += x[0] * (w[1] - w[0]);
                span += w[1] - w[0];
            }
        }
        let avg = area / span;
        assert!((avg - 50.0).abs() < 0.5, "seed {seed}: average price {avg}");
    }
}

#[test]
fn herding_ensemble_is_bimodal() {
    let params = LuxPureParams::new(100, 0.3, 1.2).unwrap();
    let spec = build_pure(&params).unwrap();
    let opinion = |_: f64, c: &[f64]| pure_opinion(c);
    let price = |x: f64, _: &[f64]| x;
    let members: Vec<EnsembleMember> = (0..200)
        .map(|k| {
            let mut s = record_series(&spec, derive_seed(3, k), 100.0, &[&price, &opinion]).unwrap();
            let opinion = s.pop().unwrap();
            EnsembleMember { price: s.pop().unwrap(), opinion }
        })
        .collect();
    let grid = uniform_grid(100.0, 101);
    let summary = summarize_ensemble(&members, &grid, &DEFAULT_LEVELS, 20).unwrap();
    let h = &summary.terminal_histogram;
    assert_eq!(h.total(), 200);
    let below = h.mass_where(|v| v < 0.0);
    let above = h.mass_where(|v| v > 0.0);
    assert!(below >= 0.3 && above >= 0.3, "masses {below} / {above}");
    // Paths sit near the herding rest points, not at zero.
    let v = tanh_fixed_point(1.2);
    let near = summary.terminal_opinion.iter().filter(|o| (o.abs() - v).abs() < 0.25).count();
    assert!(near >= 150, "only {near} paths near +-{v}");
}

#[test]
fn opinion_ode_is_monotone_and_confined() {
    for gamma in [0.8, 1.2] {
        for v0 in [-0.9, -0.3, 0.2, 0.9] {
            let path = integrate_ode(&pure_limit_ode(0.3, gamma, v0, 50.0), DEFAULT_STEP).unwrap();
            let y = path.component(0);
            let rising = y[1] > y[0];
            for w in y.windows(2) {
                assert!(w[1].abs() <= 1.0);
                if rising {
                    assert!(w[1] >= w[0] - 1e-15);
                } else {
                    assert!(w[1] <= w[0] + 1e-15);
                }
            }
            // A scalar autonomous flow never crosses a rest point.
            assert!(y.iter().all(|v| v.signum() == v0.signum()));
        }
    }
}

#[test]
fn finite_opinion_stays_on_lattice() {
    let params = LuxPureParams::new(50, 0.3, 1.2).unwrap();
    let traj = simulate_trajectory(&build_pure(&params).unwrap(), 20.0, 4).unwrap();
    for e in &traj.events {
        let v = pure_opinion(&e.character_after);
        let k = (v + 1.0) * 25.0;
        assert!((k - k.round()).abs() < 1e-9 && (-1.0..=1.0).contains(&v));
    }
}

#[test]
fn euler_maruyama_strong_error_shrinks_with_the_step() {
    let p = regime_case(Regime::Oscillatory);
    let sde = extended_limit_sde(&ExtendedLimit::from_params(&p), InitialCondition::Fixed(vec![48.0, 0.2]), 10.0);
    let steps = [0.04, 0.02, 0.01];
    let mut errors = [0.0; 3];
    let paths = 64;
    for k in 0..paths {
        let mut rng = rng_from_seed(derive_seed(9, k));
        let coarse = BrownianIncrements::sample(250, 1, 0.04, &mut rng);
        let mut levels = vec![coarse];
        for _ in 0..4 {
            let next = levels.last().unwrap().refine(&mut rng);
            levels.push(next);
        }
        let reference = integrate_sde_with(&sde, &[48.0, 0.2], &levels[4]).unwrap();
        for (i, noise) in levels.iter().take(3).enumerate() {
            let path = integrate_sde_with(&sde, &[48.0, 0.2], noise).unwrap();
            let gap = (path.terminal()[0] - reference.terminal()[0]).abs();
            errors[i] += gap / paths as f64;
        }
    }
    let order = (errors[0] / errors[2]).log2() / 2.0;
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    // Additive noise: Euler-Maruyama is strongly of order one.
    assert!(order > 0.75, "observed order {order}, errors {steps:?} -> {errors:?}");
}

#[test]
fn large_market_tracks_its_limit() {
    let (beta, gamma, theta, horizon) = (0.3, 0.8, 0.5, 10.0);
    let params = LuxPureParams::new(1_000_000, beta, gamma).unwrap().with_initial_opinion(theta).unwrap();
    let limit = pure_limit_ode(beta, gamma, theta, horizon);
    let path = integrate_ode(&limit, DEFAULT_STEP).unwrap();
    let mut sim = Simulator::new(build_pure(&params).unwrap(), 0).unwrap();
    let mut sup = 0.0f64;
    sim.advance_until(horizon, |e, s| {
        sup = sup.max((s.opinion() - interpolate(&limit, &path, e.time)[0]).abs());
    })
    .unwrap();
    assert!(sup < 0.05, "sup distance {sup}");
}
