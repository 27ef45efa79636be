//! The verification suite: one check per claim, at quick or full size.

pub mod oracle;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use rfim_core::disorder::{chi, keyed_uniform, normal_cdf, phi, sample_field, shift_field, DisorderParams, Stream};
use rfim_core::estimators::{
    comp_decay_stretch, comp_decay_stretch_all, covariance_bounds, decay_fit, m_scan, min_integral_value, variance_d,
    ChainSettings, Verdict,
};
use rfim_core::gibbs::{
    b_tilde, cross_ratio_check, exact_gibbs, separating_layer, surface_tension_post_exact,
    surface_tension_post_integral, Engine, Quadrature,
};
use rfim_core::groundstate::{
    flip_thresholds, minimize, scale_observables, BoundaryCondition, Spin, SpinConfig, ThresholdMethod,
};
use rfim_core::hierarchical::{curdle, high_disorder_check, large_field_event, mandelbrot_percolation, BlockPartition};
use rfim_core::lattice::{CouplingSpec, Region, Site};
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};
use crate::run::run_with_threads;
use oracle::{annulus_instance, Instance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub claim: &'static str,
    pub verdict: Verdict,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(Level) -> anyhow::Result<(bool, String)>;

pub const CRITERIA: [(u32, &str, Check); 12] = [
    (1, "minimize() equals exhaustive enumeration", oracle_equivalence),
    (2, "surface tension T_ell <= 4 B_ell for every field", tension_bound),
    (3, "T_ell = 2 eps sum_v (t-_v - t+_v) (disagreement percolation)", tension_identity),
    (4, "FKG monotonicity: boundary, domain, sandwich, field shift, T > 0", monotonicity),
    (5, "Z++ Z-- = Z+- Z-+ for every clamped layer tau", cross_ratio),
    (6, "positive-T tension: integral = free-energy value, T <= 8 B~", positive_temperature),
    (7, "anti-concentration: P(D < E D / 2) >= chi bound", anti_concentration),
    (8, "covariance decoupling: E<s_u;s_v> <= 2m, Cov <= 4m", covariance),
    (9, "high disorder: exponential decay of m(L)", high_disorder),
    (10, "large-field scale invariance, curdling forced sites, Mandelbrot area", hierarchical),
    (11, "stretch construction and variational minimum", deterministic_utilities),
    (12, "byte-identical outputs across reruns and thread counts", reproducibility),
];

pub fn run_criterion(id: u32, level: Level) -> CriterionResult {
    let (_, claim, check) = CRITERIA.iter().find(|c| c.0 == id).copied().expect("known criterion");
    let start = Instant::now();
    let (verdict, detail) = match check(level) {
        Ok((true, d)) => (Verdict::Pass, d),
        Ok((false, d)) => (Verdict::Fail, d),
        Err(e) => (Verdict::Fail, format!("error: {e:#}")),
    };
    CriterionResult { id, claim, verdict, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn verify_suite(level: Level) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| run_criterion(c.0, level)).collect()
}

fn nn() -> CouplingSpec {
    CouplingSpec::nearest_neighbor(1.0).unwrap()
}

fn uniform(tag: u64, a: u64, b: u64) -> f64 {
    keyed_uniform(Stream::Replica, &[0x7665_7269_6679, tag, a, b])
}

fn pick(level: Level, quick: usize, full: usize) -> usize {
    match level {
        Level::Quick => quick,
        Level::Full => full,
    }
}

fn to_f64(c: &SpinConfig) -> Vec<f64> {
    c.spins().iter().map(|s| s.value()).collect()
}

// 1 -------------------------------------------------------------------------

struct Family {
    name: &'static str,
    coupling: CouplingSpec,
    region: Box<dyn Fn(u64) -> Region + Sync>,
    annulus: bool,
}

fn families() -> Vec<Family> {
    let diag = CouplingSpec::from_offsets(
        [(1, 0, 1.0), (0, 1, 0.6), (1, 1, 0.35), (1, -1, 0.35), (2, 0, 0.15)]
            .iter()
            .flat_map(|&(dx, dy, j)| [(dx, dy, j), (-dx, -dy, j)]),
    )
    .unwrap();
    vec![
        Family { name: "ball1", coupling: nn(), region: Box::new(|_| Region::ball(Site::ORIGIN, 1)), annulus: false },
        Family { name: "ball2", coupling: nn(), region: Box::new(|_| Region::ball(Site::new(3, -2), 2)), annulus: false },
        Family { name: "box4x4", coupling: nn(), region: Box::new(|_| Region::square(Site::new(-2, -2), 4)), annulus: false },
        Family { name: "box5x4", coupling: nn(), region: Box::new(|_| Region::rect(Site::ORIGIN, 5, 4)), annulus: false },
        Family { name: "annulus1", coupling: nn(), region: Box::new(|_| Region::annulus(1).unwrap()), annulus: true },
        Family {
            name: "random-subset",
            coupling: nn(),
            region: Box::new(|r| {
                let sites = Region::rect(Site::ORIGIN, 5, 4)
                    .sites()
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|(i, _)| uniform(1, r, *i as u64) < 0.6)
                    .map(|(_, s)| s)
                    .collect::<Vec<_>>();
                Region::custom(if sites.is_empty() { vec![Site::ORIGIN] } else { sites })
            }),
            annulus: false,
        },
        Family { name: "finite-range-box3x3", coupling: diag, region: Box::new(|_| Region::square(Site::ORIGIN, 3)), annulus: false },
    ]
}

fn oracle_equivalence(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 20, 200) as u64;
    let mut report = Vec::new();
    let mut ok = true;
    for (fi, fam) in families().iter().enumerate() {
        let failures: Vec<String> = (0..n)
            .into_par_iter()
            .filter_map(|r| {
                let region = (fam.region)(r);
                let seed = 10_000 * fi as u64 + r;
                let field = sample_field(&region, seed);
                let eps = 0.1 + 3.0 * uniform(2, seed, 0);
                let h = 2.0 * uniform(2, seed, 1) - 1.0;
                let params = DisorderParams::ground(h, eps).unwrap();
                let draw = uniform(2, seed, 2);
                let (bc, tau): (BoundaryCondition, Box<dyn Fn(Site) -> f64>) = if fam.annulus {
                    let outer = if draw < 0.5 { Spin::Plus } else { Spin::Minus };
                    let inner = if uniform(2, seed, 3) < 0.5 { Spin::Plus } else { Spin::Minus };
                    let (o, i) = (outer.value(), inner.value());
                    (BoundaryCondition::Mixed { outer, inner }, Box::new(move |v: Site| if v.distance(Site::ORIGIN) <= 1 { i } else { o }))
                } else if draw < 0.3 {
                    (BoundaryCondition::PLUS, Box::new(|_| 1.0))
                } else if draw < 0.6 {
                    (BoundaryCondition::MINUS, Box::new(|_| -1.0))
                } else {
                    let map: BTreeMap<Site, Spin> = region
                        .vertex_boundary(&fam.coupling)
                        .into_iter()
                        .enumerate()
                        .map(|(k, s)| (s, if uniform(3, seed, k as u64) < 0.5 { Spin::Plus } else { Spin::Minus }))
                        .collect();
                    let m2 = map.clone();
                    (BoundaryCondition::Explicit(map), Box::new(move |v: Site| m2[&v].value()))
                };
                let inst = Instance::new(
                    region.sites(),
                    &fam.coupling,
                    &|s| params.h + params.epsilon * field.value_at(s).unwrap(),
                    &*tau,
                );
                let (e, arg, gap) = inst.ground_state();
                let gs = match minimize(&region, &bc, &fam.coupling, &field, &params) {
                    Ok(g) => g,
                    Err(err) => return Some(format!("replica {r}: {err}")),
                };
                if (gs.energy - e).abs() > 1e-9 {
                    return Some(format!("replica {r}: energy {} vs oracle {e}", gs.energy));
                }
                if gap > 1e-7 && to_f64(&gs.config) != arg {
                    return Some(format!("replica {r}: configuration differs (gap {gap})"));
                }
                None
            })
            .collect();
        if !failures.is_empty() {
            ok = false;
            report.push(format!("{}: {} failures, first {}", fam.name, failures.len(), failures[0]));
        } else {
            report.push(format!("{}: {n} ok", fam.name));
        }
    }
    Ok((ok, report.join("; ")))
}

// 2, 3 ----------------------------------------------------------------------

const TENSION_EPS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

fn tension_seed(eps_index: usize, r: u64) -> u64 {
    rfim_core::estimators::replica_seed(0x7465_6e73 + eps_index as u64, r)
}

fn tension_bound(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 50, 500) as u64;
    let max_ell = pick(level, 3, 4) as u32;
    let oracle_n = pick(level, 5, 20) as u64;
    let region = Region::ball(Site::ORIGIN, 3 * max_ell);
    let jobs: Vec<(usize, u64)> = (0..TENSION_EPS.len()).flat_map(|e| (0..n).map(move |r| (e, r))).collect();
    let results: Vec<anyhow::Result<(usize, f64, usize)>> = jobs
        .par_iter()
        .map(|&(ei, r)| {
            let params = DisorderParams::ground(0.0, TENSION_EPS[ei])?;
            let field = sample_field(&region, tension_seed(ei, r));
            let (mut viol, mut slack, mut oracle_bad) = (0, f64::INFINITY, 0);
            for ell in 1..=max_ell {
                let obs = scale_observables(ell, &field, &params, &nn())?;
                slack = slack.min(4.0 * obs.b - obs.tension);
                if obs.tension > 4.0 * obs.b + 1e-9 {
                    viol += 1;
                }
                if ell == 1 && r < oracle_n {
                    let f = |s: Site| params.epsilon * field.value_at(s).unwrap();
                    let e = |o: f64, i: f64| annulus_instance(1, &nn(), &f, o, i).ground_state().0;
                    let t = -(e(1.0, 1.0) + e(-1.0, -1.0) - e(1.0, -1.0) - e(-1.0, 1.0));
                    if (t - obs.tension).abs() > 1e-9 {
                        oracle_bad += 1;
                    }
                }
            }
            Ok((viol, slack, oracle_bad))
        })
        .collect();
    let mut viol = 0;
    let mut slack = f64::INFINITY;
    let mut oracle_bad = 0;
    for r in results {
        let (v, s, o) = r?;
        viol += v;
        slack = slack.min(s);
        oracle_bad += o;
    }
    let total = jobs.len() * max_ell as usize;
    Ok((
        viol == 0 && oracle_bad == 0,
        format!("{viol} violations in {total} samples, min slack {slack:.3e}; {oracle_bad} oracle tension mismatches"),
    ))
}

fn tension_identity(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 8, 500) as u64;
    let max_ell = pick(level, 2, 4) as u32;
    let region = Region::ball(Site::ORIGIN, 3 * max_ell);
    let method = ThresholdMethod::Bisection { tol: 1e-8 };
    let jobs: Vec<(usize, u64)> = (0..TENSION_EPS.len()).flat_map(|e| (0..n).map(move |r| (e, r))).collect();
    let results: Vec<anyhow::Result<(usize, f64)>> = jobs
        .par_iter()
        .map(|&(ei, r)| {
            let params = DisorderParams::ground(0.0, TENSION_EPS[ei])?;
            let field = sample_field(&region, tension_seed(ei, r));
            let (mut viol, mut worst) = (0, 0.0f64);
            for ell in 1..=max_ell {
                let t = scale_observables(ell, &field, &params, &nn())?.tension;
                let th = flip_thresholds(ell, &field, &params, &nn(), method)?;
                let err = (t - 2.0 * params.epsilon * th.integral()).abs() / t.abs().max(1.0);
                worst = worst.max(err);
                if err > 1e-5 {
                    viol += 1;
                }
            }
            Ok((viol, worst))
        })
        .collect();
    let (mut viol, mut worst) = (0, 0.0f64);
    for r in results {
        let (v, w) = r?;
        viol += v;
        worst = worst.max(w);
    }
    Ok((viol == 0, format!("{viol} violations in {} samples, worst scaled residual {worst:.3e}", jobs.len() * max_ell as usize)))
}

// 4 -------------------------------------------------------------------------

fn monotonicity(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 40, 200) as u64;
    let c = nn();
    let counts: Vec<anyhow::Result<[usize; 5]>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let seed = 0x666b_6700 + r;
            let eps = 0.2 + 3.0 * uniform(4, seed, 0);
            let h = 2.0 * uniform(4, seed, 1) - 1.0;
            let params = DisorderParams::ground(h, eps)?;
            let radius = 2 + (uniform(4, seed, 2) * 4.0) as u32;
            let outer = Region::ball(Site::ORIGIN, radius);
            let field = sample_field(&outer, seed);
            let mut v = [0usize; 5];
            let plus = minimize(&outer, &BoundaryCondition::PLUS, &c, &field, &params)?;
            let minus = minimize(&outer, &BoundaryCondition::MINUS, &c, &field, &params)?;
            if !plus.config.dominates(&minus.config) {
                v[0] += 1;
            }
            let inner = Region::ball(Site::ORIGIN, radius - 1);
            let ip = minimize(&inner, &BoundaryCondition::PLUS, &c, &field, &params)?;
            let im = minimize(&inner, &BoundaryCondition::MINUS, &c, &field, &params)?;
            for &s in inner.sites() {
                if ip.config.spin_at(s) < plus.config.spin_at(s) || im.config.spin_at(s) > minus.config.spin_at(s) {
                    v[1] += 1;
                }
            }
            let tau: BTreeMap<Site, Spin> = outer
                .vertex_boundary(&c)
                .into_iter()
                .enumerate()
                .map(|(k, s)| (s, if uniform(5, seed, k as u64) < 0.5 { Spin::Plus } else { Spin::Minus }))
                .collect();
            let mid = minimize(&outer, &BoundaryCondition::Explicit(tau.clone()), &c, &field, &params)?;
            if !plus.config.dominates(&mid.config) || !mid.config.dominates(&minus.config) {
                v[2] += 1;
            }
            let dh = uniform(4, seed, 3);
            let up = minimize(&outer, &BoundaryCondition::Explicit(tau.clone()), &c, &field, &params.with_h(h + dh))?;
            let shifted = shift_field(&field, &inner, dh)?;
            let up_eta = minimize(&outer, &BoundaryCondition::Explicit(tau.clone()), &c, &shifted, &params)?;
            if !up.config.dominates(&mid.config) || !up_eta.config.dominates(&mid.config) {
                v[3] += 1;
            }
            // Positive temperature on Lambda(2) with the exact engine.
            let small = Region::ball(Site::ORIGIN, 2);
            let tp = params.with_temperature(0.3 + 2.0 * uniform(4, seed, 4));
            let gp = exact_gibbs(&small, &BoundaryCondition::PLUS, &c, &field, &tp)?;
            let gm = exact_gibbs(&small, &BoundaryCondition::MINUS, &c, &field, &tp)?;
            let tau_small: BTreeMap<Site, Spin> = small
                .vertex_boundary(&c)
                .into_iter()
                .enumerate()
                .map(|(k, s)| (s, if uniform(6, seed, k as u64) < 0.5 { Spin::Plus } else { Spin::Minus }))
                .collect();
            let gt = exact_gibbs(&small, &BoundaryCondition::Explicit(tau_small.clone()), &c, &field, &tp)?;
            let gh = exact_gibbs(&small, &BoundaryCondition::Explicit(tau_small), &c, &field, &tp.with_h(tp.h + dh))?;
            let core = Region::ball(Site::ORIGIN, 1);
            let gi = exact_gibbs(&core, &BoundaryCondition::PLUS, &c, &field, &tp)?;
            for i in 0..small.len() {
                let (p, t, m, hh) = (gp.magnetization[i], gt.magnetization[i], gm.magnetization[i], gh.magnetization[i]);
                if p + 1e-12 < t || t + 1e-12 < m || hh + 1e-12 < t {
                    v[4] += 1;
                }
            }
            for (k, &s) in core.sites().iter().enumerate() {
                if gi.magnetization[k] + 1e-12 < gp.magnetization[small.index_of(s).unwrap()] {
                    v[4] += 1;
                }
            }
            Ok(v)
        })
        .collect();
    let mut total = [0usize; 5];
    for c in counts {
        for (t, x) in total.iter_mut().zip(c?) {
            *t += x;
        }
    }
    let names = ["boundary", "domain", "sandwich", "field-shift", "positive-T"];
    let detail = names.iter().zip(total).map(|(n_, v)| format!("{n_}: {v}")).collect::<Vec<_>>().join(", ");
    Ok((total.iter().all(|&v| v == 0), format!("violations over {n} instances each: {detail}")))
}

// 5 -------------------------------------------------------------------------

fn cross_ratio(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 10, 50) as u64;
    let c = nn();
    let layer = separating_layer(1, &c);
    let expected: Vec<Site> = Region::ball(Site::ORIGIN, 3).sites().iter().copied().filter(|s| s.distance(Site::ORIGIN) == 3).collect();
    if layer != expected {
        return Ok((false, "separating layer differs from the distance-3 shell".into()));
    }
    let ball = Region::ball(Site::ORIGIN, 3);
    let results: Vec<anyhow::Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let seed = 0x6372_0000 + r;
            let t = [0.5, 1.0, 2.0][r as usize % 3];
            let params = DisorderParams::new(0.3 * uniform(7, seed, 0), 0.5 + 1.5 * uniform(7, seed, 1), t)?;
            let field = sample_field(&ball, seed);
            let tau: Vec<Spin> = (0..layer.len()).map(|k| if uniform(8, seed, k as u64) < 0.5 { Spin::Plus } else { Spin::Minus }).collect();
            let (lhs, rhs) = cross_ratio_check(1, &tau, &field, &params, &c)?;
            let f = |s: Site| params.h + params.epsilon * field.value_at(s).unwrap();
            let z = |o: f64, i: f64| {
                let inst = annulus_instance(1, &c, &f, o, i);
                let clamp: Vec<Option<f64>> =
                    inst.sites.iter().map(|s| layer.iter().position(|l| l == s).map(|k| tau[k].value())).collect();
                inst.log_partition_clamped(t, &clamp)
            };
            let (ol, or) = (z(1.0, 1.0) + z(-1.0, -1.0), z(1.0, -1.0) + z(-1.0, 1.0));
            Ok(((lhs - rhs).abs(), (lhs - ol).abs().max((rhs - or).abs()).max((ol - or).abs())))
        })
        .collect();
    let (mut worst, mut worst_oracle) = (0.0f64, 0.0f64);
    for r in results {
        let (a, b) = r?;
        worst = worst.max(a);
        worst_oracle = worst_oracle.max(b);
    }
    Ok((worst <= 1e-9 && worst_oracle <= 1e-9, format!("max |log lhs - log rhs| = {worst:.3e}; max deviation from oracle {worst_oracle:.3e}")))
}

// 6 -------------------------------------------------------------------------

fn positive_temperature(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 4, 100) as u64;
    let c = nn();
    let ball = Region::ball(Site::ORIGIN, 3);
    let quad = Quadrature::default();
    let mut detail = Vec::new();
    let mut ok = true;
    for t in [0.5, 1.0, 2.0] {
        let params = DisorderParams::new(0.0, 1.0, t)?;
        let rows: Vec<anyhow::Result<(f64, f64, bool)>> = (0..n)
            .into_par_iter()
            .map(|r| {
                let field = sample_field(&ball, 0x706f_7354 + r);
                let f = |s: Site| params.epsilon * field.value_at(s).unwrap();
                let lz = |o: f64, i: f64| annulus_instance(1, &c, &f, o, i).log_partition(t);
                let oracle = t * (lz(1.0, 1.0) + lz(-1.0, -1.0) - lz(1.0, -1.0) - lz(-1.0, 1.0));
                let exact = surface_tension_post_exact(1, &field, &params, &c)?;
                let integral = surface_tension_post_integral(1, &field, &params, &c, &Engine::Exact, &quad)?;
                let bt = b_tilde(1, &field, &params, &c, &Engine::Exact)?;
                let rel = ((integral.value - oracle).abs() / oracle.abs()).max((exact - oracle).abs() / oracle.abs());
                Ok((rel, 8.0 * bt.value - oracle, oracle <= 8.0 * bt.value + 1e-9))
            })
            .collect();
        let (mut worst, mut slack, mut viol) = (0.0f64, f64::INFINITY, 0);
        for r in rows {
            let (rel, s, holds) = r?;
            worst = worst.max(rel);
            slack = slack.min(s);
            viol += usize::from(!holds);
        }
        ok &= worst <= 1e-3 && viol == 0;
        detail.push(format!("T={t}: worst rel err {worst:.2e}, 8B~ violations {viol}, min slack {slack:.3}"));
    }
    Ok((ok, detail.join("; ")))
}

// 7 -------------------------------------------------------------------------

fn anti_concentration(level: Level) -> anyhow::Result<(bool, String)> {
    let n = pick(level, 1000, 10_000);
    let params = DisorderParams::ground(0.0, 1.0)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for ell in [1, 2] {
        let rep = variance_d(ell, &params, &nn(), n, 0x6163_0000 + ell as u64)?;
        match (rep.anti_concentration, rep.bound) {
            (Some(a), Some(bound)) => {
                let pass = a.p >= bound - 3.0 * a.std_error;
                ok &= pass;
                detail.push(format!("ell={ell}: P = {:.4} +- {:.4}, bound {bound:.3e}", a.p, a.std_error));
            }
            _ => {
                ok = false;
                detail.push(format!("ell={ell}: degenerate (zero mean or m(4 ell) = 0)"));
            }
        }
    }
    Ok((ok, detail.join("; ")))
}

// 8 -------------------------------------------------------------------------

fn covariance(level: Level) -> anyhow::Result<(bool, String)> {
    let c = nn();
    let mut ok = true;
    let mut detail = Vec::new();
    for t in [0.0, 1.0] {
        let params = DisorderParams::new(0.0, 1.0, t)?;
        let (replicas, chain) = if t == 0.0 {
            (pick(level, 200, 2000), ChainSettings { sweeps: 0, burn_in: 0 })
        } else {
            (pick(level, 20, 200), ChainSettings { sweeps: pick(level, 400, 2000), burn_in: pick(level, 100, 500) })
        };
        for ell in [2u32, 3] {
            if level == Level::Quick && t > 0.0 && ell == 3 {
                continue;
            }
            let d = (2 * ell + 1) as i32;
            let (u, v) = (Site::new(-d / 2, 0), Site::new(d - d / 2, 0));
            let rep = covariance_bounds(u, v, ell, &params, &c, replicas, 0x636f_7600 + ell as u64, &chain)?;
            let pass = rep.truncated.verdict == Verdict::Pass && rep.covariance.verdict == Verdict::Pass;
            ok &= pass;
            detail.push(format!(
                "T={t} ell={ell}: trunc {:.2e} vs 2m {:.2e}, cov {:.2e} vs 4m {:.2e}",
                rep.truncated.estimate, rep.truncated.bound, rep.covariance.estimate, rep.covariance.bound
            ));
        }
    }
    Ok((ok, detail.join("; ")))
}

// 9 -------------------------------------------------------------------------

fn high_disorder(level: Level) -> anyhow::Result<(bool, String)> {
    let params = DisorderParams::ground(0.0, 5.5)?;
    let regime = high_disorder_check(&params, &nn())?;
    let (scales, replicas): (Vec<u32>, usize) = match level {
        Level::Quick => (vec![1, 2, 3, 4, 5], 10_000),
        Level::Full => (vec![1, 2, 4, 8, 16], 100_000),
    };
    let s = m_scan(&scales, &params, &nn(), replicas, 0x6864_0000, &Engine::Exact)?;
    let fit = decay_fit(&s)?;
    let exp = fit.exponential;
    let ok = regime.exceptional_prob < 0.55 && exp.slope + 3.0 * exp.slope_se < 0.0 && exp.rss < fit.power.rss;
    Ok((
        ok,
        format!(
            "P(|h+eps eta| <= 4J) = {:.4}; m = {:?}; exp slope {:.4} +- {:.4}, rss exp {:.3e} vs power {:.3e}; {}",
            regime.exceptional_prob,
            s.mean,
            exp.slope,
            exp.slope_se,
            exp.rss,
            fit.power.rss,
            fit.warnings.join("; ")
        ),
    ))
}

// 10 ------------------------------------------------------------------------

fn hierarchical(level: Level) -> anyhow::Result<(bool, String)> {
    let c = nn();
    let blocks = pick(level, 10_000, 100_000) as i32;
    let params = DisorderParams::ground(0.0, 2.0)?;
    let p = chi(4.0 / params.epsilon);
    let mut ok = true;
    let mut detail = Vec::new();
    for lvl in 0..=2u32 {
        let part = BlockPartition::new(lvl);
        let hits: usize = (0..blocks)
            .into_par_iter()
            .map(|i| {
                let block = part.block(i % 1000, i / 1000);
                usize::from(large_field_event(&block, &sample_field(&block, 0x6c66), &params, &c).unwrap())
            })
            .sum();
        let rate = hits as f64 / blocks as f64;
        let se = (p * (1.0 - p) / blocks as f64).sqrt();
        ok &= (rate - p).abs() <= 3.0 * se;
        detail.push(format!("level {lvl}: {rate:.5} vs {p:.5} (se {se:.1e})"));
    }
    let windows = pick(level, 4, 20) as u64;
    let window = BlockPartition::new(3).block(0, 0);
    let mut mismatches = 0;
    for (k, (h, eps)) in [(0.0, 1.5), (0.0, 2.0), (0.5, 3.0)].into_iter().enumerate() {
        let params = DisorderParams::ground(h, eps)?;
        for r in 0..windows {
            let field = sample_field(&window, 0x6375_0000 + 100 * k as u64 + r);
            let st = curdle(&window, &field, &params, &c, 3, Spin::Plus)?;
            for (i, s) in window.sites().iter().enumerate() {
                let b = h + eps * field.value_at(*s).unwrap();
                if b.abs() > 4.0 && st.tau.spins()[i] != Spin::from_sign(b) {
                    mismatches += 1;
                }
            }
        }
    }
    ok &= mismatches == 0;
    detail.push(format!("curdle forced-site mismatches: {mismatches}"));
    let samples = pick(level, 300, 2000);
    for pm in [0.1, 0.3, 0.5] {
        let s = mandelbrot_percolation(pm, 4, samples, 0x6d62)?;
        let pass = (s.area_fraction.mean - s.expected_area).abs() <= 3.0 * s.area_fraction.std_error;
        ok &= pass;
        detail.push(format!("p={pm}: area {:.5} +- {:.5} vs {:.5}", s.area_fraction.mean, s.area_fraction.std_error, s.expected_area));
    }
    Ok((ok, detail.join("; ")))
}

// 11 ------------------------------------------------------------------------

/// Random non-increasing sequence with `p_k >= k^-alpha` at every `k`.
fn admissible_sequence(seed: u64, len: usize) -> (Vec<f64>, f64) {
    let alpha = 0.05 + 0.6 * uniform(9, seed, 0);
    let rate = 10f64.powf(-1.0 - 3.0 * uniform(9, seed, 1));
    let mut p = Vec::with_capacity(len);
    let mut walk = 1.0f64;
    for j in 1..=len {
        let u = uniform(10, seed, j as u64);
        walk *= if u < 0.002 { 0.5 } else { (-rate * -u.ln()).exp() };
        let floor = (j as f64).powf(-alpha);
        p.push(walk.max(floor).min(1.0).min(p.last().copied().unwrap_or(1.0)));
    }
    (p, alpha)
}

fn deterministic_utilities(level: Level) -> anyhow::Result<(bool, String)> {
    let sequences = pick(level, 10, 100) as u64;
    let len = pick(level, 2000, 10_000);
    let results: Vec<anyhow::Result<(usize, usize, usize)>> = (0..sequences)
        .into_par_iter()
        .map(|sq| {
            let (p, alpha) = admissible_sequence(sq, len);
            if p.windows(2).any(|w| w[1] > w[0]) {
                anyhow::bail!("generated sequence is not monotone");
            }
            let all = comp_decay_stretch_all(&p, alpha)?;
            // u_j = p_j j^{2 alpha}; the upper inequality for all j <= n is max_{j<=n} u_j <= u_n.
            let u: Vec<f64> = p.iter().enumerate().map(|(i, &x)| x * ((i + 1) as f64).powf(2.0 * alpha)).collect();
            let mut prefix_max = Vec::with_capacity(len);
            for &x in &u {
                prefix_max.push(prefix_max.last().map_or(x, |m: &f64| m.max(x)));
            }
            let (mut bad, mut checked, mut literal) = (0, 0, 0);
            for k in 1..=len {
                let r = all[k - 1].ok_or_else(|| anyhow::anyhow!("k = {k} reported inadmissible"))?;
                checked += 1;
                let n = r.n;
                let sqrt_ok = (n * n) >= k && n <= k;
                let upper_ok = prefix_max[n - 1] <= u[n - 1] * (1.0 + 1e-12);
                if !sqrt_ok || !upper_ok {
                    bad += 1;
                }
            }
            // Literal per-j scan on a sample of k, cross-checking the single-k API.
            for t in 0..20u64 {
                let k = 1 + (uniform(11, sq, t) * len as f64) as usize;
                let r = comp_decay_stretch(&p, alpha, k)?;
                literal += 1;
                let n = r.n;
                if Some(r) != all[k - 1] {
                    bad += 1;
                }
                for j in 1..=n {
                    let (pn, pj) = (p[n - 1], p[j - 1]);
                    if pn > pj || pj > pn * (n as f64 / j as f64).powf(2.0 * alpha) * (1.0 + 1e-12) {
                        bad += 1;
                        break;
                    }
                }
            }
            Ok((bad, checked, literal))
        })
        .collect();
    let (mut bad, mut checked) = (0, 0);
    for r in results {
        let (b, c, _) = r?;
        bad += b;
        checked += c;
    }
    let funcs = pick(level, 200, 1000) as u64;
    let (mut beaten, mut indicator_err) = (0, 0.0f64);
    for f in 0..funcs {
        let pv = 0.01 + 0.98 * uniform(12, f, 0);
        let m = min_integral_value(&phi, pv)?;
        let cells = 20 + (uniform(12, f, 1) * 400.0) as usize;
        let (a, b) = (-8.0, 8.0);
        let w = (b - a) / cells as f64;
        let edges: Vec<f64> = (0..=cells).map(|i| a + w * i as f64).collect();
        let mass: Vec<f64> = edges.windows(2).map(|e| normal_cdf(e[1]) - normal_cdf(e[0])).collect();
        let shape = uniform(12, f, 2);
        let raw: Vec<f64> = (0..cells)
            .map(|i| {
                let x = 0.5 * (edges[i] + edges[i + 1]);
                let u = uniform(13, f, i as u64);
                if shape < 0.3 { u } else if shape < 0.6 { (-(x * x) * u).exp() } else { u.powi(4) }
            })
            .collect();
        let target = 1.0 - pv;
        let got: f64 = raw.iter().zip(&mass).map(|(v, m)| v * m).sum();
        let total_mass: f64 = mass.iter().sum();
        let fvals: Vec<f64> = if got >= target {
            raw.iter().map(|v| v * target / got).collect()
        } else {
            let mu = (target - got) / (total_mass - got);
            raw.iter().map(|v| v + mu * (1.0 - v)).collect()
        };
        let integral: f64 = fvals.iter().map(|v| v * w).sum();
        if integral < m.value - 1e-9 {
            beaten += 1;
        }
        let inside = 1.0 - chi(m.q);
        // The indicator of [-q, q] meets the constraint and integrates to 2q.
        indicator_err = indicator_err.max((inside - target).abs()).max((m.value - 2.0 * m.q).abs());
    }
    let ok = bad == 0 && beaten == 0 && indicator_err <= 1e-9;
    Ok((
        ok,
        format!(
            "stretch: {bad} failures over {checked} (sequence, k) pairs; min integral beaten by {beaten} of {funcs} feasible functions; indicator constraint error {indicator_err:.1e}"
        ),
    ))
}

// 12 ------------------------------------------------------------------------

pub fn reproducibility_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default_for(Kind::SurfaceTension);
    c.replicas = 24;
    c.scales = vec![1, 2];
    c.thresholds = Some(ThresholdMethod::Breakpoint);
    c
}

fn reproducibility(_level: Level) -> anyhow::Result<(bool, String)> {
    let mut configs = vec![reproducibility_config()];
    let mut m = ExperimentConfig::default_for(Kind::MScan);
    m.replicas = 200;
    configs.push(m);
    let mut outputs = Vec::new();
    for c in &configs {
        for threads in [1, 4, 8, 1] {
            let rec = run_with_threads(c, Some(threads))?;
            outputs.push((c.kind, threads, rec.csv().into_bytes(), rec.summary_json().into_bytes()));
        }
    }
    let mut ok = true;
    for w in outputs.chunks(4) {
        ok &= w.iter().all(|o| o.2 == w[0].2 && o.3 == w[0].3);
    }
    Ok((ok, format!("{} runs over 1/4/8/1 threads for {} configs", outputs.len(), configs.len())))
}
