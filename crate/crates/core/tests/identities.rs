use rfim_core::disorder::{sample_field, DisorderParams};
use rfim_core::gibbs::{b_tilde, cross_ratio_check, surface_tension_post_exact, Engine};
use rfim_core::groundstate::{flip_thresholds, scale_observables, Spin, ThresholdMethod};
use rfim_core::lattice::{CouplingSpec, Region, Site};

fn nn() -> CouplingSpec {
    CouplingSpec::nearest_neighbor(1.0).unwrap()
}

#[test]
fn tension_is_bounded_by_four_b() {
    for ell in 1..=3 {
        let ball = Region::ball(Site::ORIGIN, 3 * ell);
        for seed in 0..40 {
            let params = DisorderParams::ground(0.0, [0.5, 1.0, 2.0, 4.0][seed as usize % 4]).unwrap();
            let obs = scale_observables(ell, &sample_field(&ball, seed), &params, &nn()).unwrap();
            assert!(obs.tension <= 4.0 * obs.b + 1e-9, "ell {ell} seed {seed}");
            assert!(obs.tension >= -1e-9);
        }
    }
}

#[test]
fn tension_equals_threshold_integral() {
    for ell in 1..=2 {
        let ball = Region::ball(Site::ORIGIN, 3 * ell);
        for seed in 0..15 {
            let params = DisorderParams::ground(0.0, [0.5, 1.0, 2.0][seed as usize % 3]).unwrap();
            let field = sample_field(&ball, 900 + seed);
            let tension = scale_observables(ell, &field, &params, &nn()).unwrap().tension;
            let th = flip_thresholds(ell, &field, &params, &nn(), ThresholdMethod::Breakpoint).unwrap();
            let rhs = 2.0 * params.epsilon * th.integral();
            assert!((tension - rhs).abs() <= 1e-5 * tension.abs().max(1.0), "{tension} vs {rhs}");
        }
    }
}

#[test]
fn cross_ratio_holds_for_every_tau() {
    let ball = Region::ball(Site::ORIGIN, 3);
    let params = DisorderParams::new(0.0, 1.0, 1.0).unwrap();
    let layer = rfim_core::gibbs::separating_layer(1, &nn());
    for seed in 0..5u64 {
        let tau: Vec<Spin> =
            (0..layer.len()).map(|i| if (seed >> (i % 8)) & 1 == 1 { Spin::Plus } else { Spin::Minus }).collect();
        let (lhs, rhs) = cross_ratio_check(1, &tau, &sample_field(&ball, seed), &params, &nn()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9);
    }
}

#[test]
fn positive_temperature_tension_bounded_by_eight_b_tilde() {
    let ball = Region::ball(Site::ORIGIN, 3);
    let params = DisorderParams::new(0.0, 1.0, 1.0).unwrap();
    for seed in 0..3 {
        let field = sample_field(&ball, seed);
        let t = surface_tension_post_exact(1, &field, &params, &nn()).unwrap();
        let b = b_tilde(1, &field, &params, &nn(), &Engine::Exact).unwrap().value;
        assert!(t <= 8.0 * b + 1e-9);
    }
}
