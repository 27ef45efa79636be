use rfim_core::disorder::{chi, sample_field, DisorderParams};
use rfim_core::estimators::{estimate_m, m_scan};
use rfim_core::gibbs::Engine;
use rfim_core::hierarchical::{
    block_density, curdle, exceptional_percolation, large_field_event, mandelbrot_percolation, BlockPartition,
};
use rfim_core::groundstate::{minimize, BoundaryCondition, Spin};
use rfim_core::lattice::CouplingSpec;

fn nn() -> CouplingSpec {
    CouplingSpec::nearest_neighbor(1.0).unwrap()
}

#[test]
fn standard_error_shrinks_like_root_n() {
    let params = DisorderParams::ground(0.0, 2.0).unwrap();
    let a = estimate_m(2, &params, &nn(), 2000, 11, &Engine::Exact).unwrap();
    let b = estimate_m(2, &params, &nn(), 4000, 11, &Engine::Exact).unwrap();
    let ratio = a.std_error / b.std_error;
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn m_scan_shares_fields_across_scales() {
    let params = DisorderParams::ground(0.0, 1.5).unwrap();
    let s = m_scan(&[1, 2, 4], &params, &nn(), 300, 3, &Engine::Exact).unwrap();
    let single = estimate_m(2, &params, &nn(), 300, 3, &Engine::Exact).unwrap();
    assert_eq!(s.mean[1], single.mean);
    assert!(s.mean.windows(2).all(|w| w[1] <= w[0] + 0.05));
}

#[test]
fn large_field_rate_is_scale_invariant() {
    let params = DisorderParams::ground(0.0, 2.0).unwrap();
    let p = chi(4.0 / params.epsilon);
    for level in [0u32, 1] {
        let part = BlockPartition::new(level);
        let n = 4000;
        let hits = (0..n)
            .filter(|&i| {
                let block = part.block(i, -i);
                large_field_event(&block, &sample_field(&block, 5), &params, &nn()).unwrap()
            })
            .count();
        let rate = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * se, "level {level}: {rate} vs {p}");
    }
}

#[test]
fn curdling_respects_forced_sites() {
    let window = BlockPartition::new(3).block(0, 0);
    let params = DisorderParams::ground(0.0, 2.0).unwrap();
    for seed in 0..5 {
        let field = sample_field(&window, seed);
        let st = curdle(&window, &field, &params, &nn(), 3, Spin::Plus).unwrap();
        let flipped = curdle(&window, &field, &params, &nn(), 3, Spin::Minus).unwrap();
        let gs = minimize(&window, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        for (i, s) in window.sites().iter().enumerate() {
            let b = params.epsilon * field.value_at(*s).unwrap();
            if b.abs() > 4.0 {
                assert_eq!(st.tau.spins()[i], Spin::from_sign(b));
                assert_eq!(gs.config.spins()[i], Spin::from_sign(b));
            }
            if st.is_interior_determined(i) {
                assert_eq!(st.tau.spins()[i], flipped.tau.spins()[i]);
            }
            assert!(st.k[i] <= st.n[i]);
        }
    }
}

#[test]
fn mandelbrot_area_matches_retention() {
    let (p, levels) = (0.2, 4);
    let s = mandelbrot_percolation(p, levels, 400, 21).unwrap();
    let expected = (1.0f64 - p).powi(levels as i32);
    assert!((s.area_fraction.mean - expected).abs() < 3.0 * s.area_fraction.std_error);
}

#[test]
fn exceptional_open_fraction_matches_closed_form() {
    let params = DisorderParams::ground(0.0, 6.0).unwrap();
    let s = exceptional_percolation(6, &params, &nn(), 400, 8, true).unwrap();
    assert!((s.open_fraction.mean - s.open_prob_closed_form).abs() < 3.0 * s.open_fraction.std_error + 1e-3);
    assert_eq!(s.forced_violations, Some(0));
}

#[test]
fn block_probability_respects_site_union_bound() {
    let params = DisorderParams::ground(0.0, 2.0).unwrap();
    let r = block_density(2, &params, &nn(), 200, 1).unwrap();
    assert!(r.block_prob.p <= r.site_union_bound + 3.0 * r.block_prob.std_error);
}
