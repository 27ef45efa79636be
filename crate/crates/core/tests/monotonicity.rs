use proptest::prelude::*;

use rfim_core::disorder::{sample_field, DisorderParams};
use rfim_core::gibbs::exact_gibbs;
use rfim_core::groundstate::{minimize, BoundaryCondition, Spin};
use rfim_core::lattice::{CouplingSpec, Region, Site};

fn nn() -> CouplingSpec {
    CouplingSpec::nearest_neighbor(1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plus_boundary_dominates_minus(seed in any::<u64>(), eps in 0.2f64..3.0, h in -1.0f64..1.0) {
        let region = Region::ball(Site::ORIGIN, 4);
        let field = sample_field(&region, seed);
        let params = DisorderParams::ground(h, eps).unwrap();
        let plus = minimize(&region, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        let minus = minimize(&region, &BoundaryCondition::MINUS, &nn(), &field, &params).unwrap();
        prop_assert!(plus.config.dominates(&minus.config));
    }

    #[test]
    fn field_shift_is_monotone(seed in any::<u64>(), eps in 0.2f64..3.0, h in -1.0f64..1.0, dh in 0.0f64..0.5) {
        let region = Region::square(Site::new(-3, -3), 7);
        let field = sample_field(&region, seed);
        let lo = minimize(&region, &BoundaryCondition::MINUS, &nn(), &field, &DisorderParams::ground(h, eps).unwrap()).unwrap();
        let hi = minimize(&region, &BoundaryCondition::MINUS, &nn(), &field, &DisorderParams::ground(h + dh, eps).unwrap()).unwrap();
        prop_assert!(hi.config.dominates(&lo.config));
    }

    #[test]
    fn shrinking_the_domain_raises_plus_states(seed in any::<u64>(), eps in 0.2f64..3.0) {
        let outer = Region::ball(Site::ORIGIN, 5);
        let inner = Region::ball(Site::ORIGIN, 3);
        let field = sample_field(&outer, seed);
        let params = DisorderParams::ground(0.0, eps).unwrap();
        let big = minimize(&outer, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        let small = minimize(&inner, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        let big_m = minimize(&outer, &BoundaryCondition::MINUS, &nn(), &field, &params).unwrap();
        let small_m = minimize(&inner, &BoundaryCondition::MINUS, &nn(), &field, &params).unwrap();
        for &s in inner.sites() {
            prop_assert!(small.config.spin_at(s) >= big.config.spin_at(s));
            prop_assert!(small_m.config.spin_at(s) <= big_m.config.spin_at(s));
        }
    }

    #[test]
    fn positive_temperature_magnetizations_are_ordered(seed in any::<u64>(), eps in 0.2f64..2.0, t in 0.3f64..3.0) {
        let region = Region::ball(Site::ORIGIN, 2);
        let field = sample_field(&region, seed);
        let params = DisorderParams::new(0.0, eps, t).unwrap();
        let plus = exact_gibbs(&region, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        let minus = exact_gibbs(&region, &BoundaryCondition::MINUS, &nn(), &field, &params).unwrap();
        for (p, m) in plus.magnetization.iter().zip(&minus.magnetization) {
            prop_assert!(p + 1e-12 >= *m);
        }
    }
}

#[test]
fn forced_sites_follow_their_field() {
    let region = Region::ball(Site::ORIGIN, 5);
    for seed in 0..50 {
        let field = sample_field(&region, seed);
        let params = DisorderParams::ground(0.3, 3.0).unwrap();
        let gs = minimize(&region, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        for (s, &spin) in region.sites().iter().zip(gs.config.spins()) {
            let b = params.h + params.epsilon * field.value_at(*s).unwrap();
            if b.abs() > 4.0 {
                assert_eq!(spin, Spin::from_sign(b));
            }
        }
    }
}
