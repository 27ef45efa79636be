//! Ground states against exhaustive enumeration with an independent energy.

use std::collections::BTreeMap;

use rfim_core::disorder::{sample_field, DisorderParams, FieldSample};
use rfim_core::groundstate::{hamiltonian_energy, minimize, BoundaryCondition, Spin, SpinConfig};
use rfim_core::lattice::{CouplingSpec, Region, Site};

/// `H = -sum_{pairs in R} J s s - sum_{(u in R, v outside)} J s_u tau_v - sum (h + eps eta) s`.
fn oracle_energy(
    region: &Region,
    spins: &[i8],
    tau: &dyn Fn(Site) -> i8,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
) -> f64 {
    let sites = region.sites();
    let mut e = 0.0;
    for (a, &u) in sites.iter().enumerate() {
        e -= (params.h + params.epsilon * field.value_at(u).unwrap()) * spins[a] as f64;
        for &(dx, dy, j) in coupling.offsets() {
            let v = u.offset(dx, dy);
            match sites.iter().position(|&w| w == v) {
                Some(b) if b > a => e -= j * (spins[a] * spins[b]) as f64,
                Some(_) => {}
                None => e -= j * (spins[a] * tau(v)) as f64,
            }
        }
    }
    e
}

fn brute_force(
    region: &Region,
    tau: &dyn Fn(Site) -> i8,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
) -> (f64, Vec<i8>, f64) {
    let n = region.len();
    let (mut best, mut second, mut arg) = (f64::INFINITY, f64::INFINITY, vec![]);
    for mask in 0u32..(1 << n) {
        let spins: Vec<i8> = (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
        let e = oracle_energy(region, &spins, tau, coupling, field, params);
        if e < best {
            second = best;
            best = e;
            arg = spins;
        } else if e < second {
            second = e;
        }
    }
    (best, arg, second - best)
}

fn families() -> Vec<Region> {
    vec![
        Region::ball(Site::ORIGIN, 1),
        Region::ball(Site::ORIGIN, 2),
        Region::square(Site::new(-1, -2), 4),
        Region::rect(Site::ORIGIN, 5, 3),
        Region::custom([Site::new(0, 0), Site::new(1, 0), Site::new(3, 0), Site::new(3, 1), Site::new(-2, 2)]),
    ]
}

#[test]
fn minimize_matches_enumeration() {
    let coupling = CouplingSpec::nearest_neighbor(1.0).unwrap();
    for (fi, region) in families().iter().enumerate() {
        for r in 0..30u64 {
            let eps = [0.3, 1.0, 2.5][r as usize % 3];
            let params = DisorderParams::ground(0.2 * (r % 4) as f64 - 0.3, eps).unwrap();
            let field = sample_field(region, 1000 * fi as u64 + r);
            let bc_spin = if r % 2 == 0 { Spin::Plus } else { Spin::Minus };
            let tau = |_s: Site| bc_spin.value() as i8;
            let (e, arg, gap) = brute_force(region, &tau, &coupling, &field, &params);
            let gs = minimize(region, &BoundaryCondition::Uniform(bc_spin), &coupling, &field, &params).unwrap();
            assert!((gs.energy - e).abs() < 1e-9, "family {fi} replica {r}: {} vs {e}", gs.energy);
            if gap > 1e-7 {
                let spins: Vec<i8> = gs.config.spins().iter().map(|s| s.value() as i8).collect();
                assert_eq!(spins, arg);
            }
        }
    }
}

#[test]
fn finite_range_and_explicit_boundary() {
    let half = [(1, 0, 1.0), (0, 1, 0.7), (1, 1, 0.3), (2, 0, 0.2)];
    let coupling = CouplingSpec::from_offsets(half.iter().flat_map(|&(dx, dy, j)| [(dx, dy, j), (-dx, -dy, j)])).unwrap();
    let region = Region::square(Site::ORIGIN, 3);
    let params = DisorderParams::ground(0.1, 1.2).unwrap();
    for r in 0..20u64 {
        let field = sample_field(&region, 77 + r);
        let boundary = region.vertex_boundary(&coupling);
        let map: BTreeMap<Site, Spin> = boundary
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, if (i as u64 + r) % 3 == 0 { Spin::Minus } else { Spin::Plus }))
            .collect();
        let tau = |s: Site| map[&s].value() as i8;
        let (e, _, _) = brute_force(&region, &tau, &coupling, &field, &params);
        let gs = minimize(&region, &BoundaryCondition::Explicit(map.clone()), &coupling, &field, &params).unwrap();
        assert!((gs.energy - e).abs() < 1e-9);
    }
}

#[test]
fn hamiltonian_matches_oracle_energy() {
    let coupling = CouplingSpec::nearest_neighbor(0.8).unwrap();
    let region = Region::ball(Site::new(2, -1), 2);
    let params = DisorderParams::ground(-0.4, 1.7).unwrap();
    let field = sample_field(&region, 4);
    for mask in [0u32, 1, 0x1555, 0x1fff, 0x0a0a] {
        let spins: Vec<Spin> = (0..region.len()).map(|i| if mask >> i & 1 == 1 { Spin::Plus } else { Spin::Minus }).collect();
        let raw: Vec<i8> = spins.iter().map(|s| s.value() as i8).collect();
        let config = SpinConfig::new(region.clone(), spins).unwrap();
        let e = hamiltonian_energy(&config, &BoundaryCondition::MINUS, &coupling, &field, &params).unwrap();
        assert!((e - oracle_energy(&region, &raw, &|_| -1, &coupling, &field, &params)).abs() < 1e-12);
    }
}
