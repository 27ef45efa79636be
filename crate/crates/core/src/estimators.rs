//! Disorder averages over replicas (`m(L)`, moments of `D_ell`, covariance
//! bounds), decay fits, and two deterministic utilities: the slow-decay
//! stretch construction and the variational minimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{chi, derive_seed, gamma_for, sample_field, DisorderParams};
use crate::error::{Error, Result};
use crate::gibbs::{
    d_post, exact_magnetization_pair, heat_bath_chain, Engine, HeatBathSettings, ENUMERATION_BUDGET,
};
use crate::groundstate::{d_ell, minimize, BoundaryCondition, Problem};
use crate::lattice::{CouplingSpec, Region, Site};

/// Outcome of a numerical inequality check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// `estimate <= bound` up to `3 sigma`, where `sigma` combines both errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub estimate: f64,
    pub estimate_se: f64,
    pub bound: f64,
    pub bound_se: f64,
    /// `bound - estimate`.
    pub margin: f64,
    pub verdict: Verdict,
}

impl BoundCheck {
    pub fn upper(estimate: f64, estimate_se: f64, bound: f64, bound_se: f64) -> Self {
        let sigma = estimate_se.hypot(bound_se);
        let margin = bound - estimate;
        let verdict = if margin >= -3.0 * sigma { Verdict::Pass } else { Verdict::Fail };
        BoundCheck { estimate, estimate_se, bound, bound_se, margin, verdict }
    }
}

/// Mean and standard error of independent samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        MeanEstimate { mean, std_error: (var / n as f64).sqrt(), replicas: n }
    }
}

/// Wilson score interval at `z` standard deviations.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Disorder-averaged observable against scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub scales: Vec<u32>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub replicas: Vec<usize>,
    /// 95% Wilson intervals when the per-replica values are indicators.
    pub wilson: Option<Vec<(f64, f64)>>,
    pub params: DisorderParams,
    pub coupling: CouplingSpec,
    pub base_seed: u64,
}

impl EstimateSeries {
    pub fn value_at(&self, scale: u32) -> Option<f64> {
        self.scales.iter().position(|&s| s == scale).map(|i| self.mean[i])
    }
}

/// Runs `f` for replicas `0..n` in parallel, returning results in replica order.
pub fn par_replicas<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..n as u64).into_par_iter().map(&f).collect()
}

/// Replica `r`'s field seed.
pub fn replica_seed(base_seed: u64, r: u64) -> u64 {
    derive_seed(base_seed, r)
}

fn require_replicas(replicas: usize, min: usize) -> Result<()> {
    if replicas < min {
        Err(Error::domain(format!("at least {min} replicas required, got {replicas}")))
    } else {
        Ok(())
    }
}

/// `1/2 [<s_0>^{Lambda(L),+} - <s_0>^{Lambda(L),-}]` for one field; at `T = 0`
/// the disagreement indicator.
pub fn origin_gap(
    radius: u32,
    field: &crate::disorder::FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    engine: &Engine,
    chain_seed: u64,
) -> Result<f64> {
    let ball = Region::ball(Site::ORIGIN, radius);
    if params.temperature == 0.0 {
        let plus = minimize(&ball, &BoundaryCondition::PLUS, coupling, field, params)?;
        let minus = minimize(&ball, &BoundaryCondition::MINUS, coupling, field, params)?;
        let i = ball.index_of(Site::ORIGIN).unwrap();
        return Ok(if plus.config.spins()[i] != minus.config.spins()[i] { 1.0 } else { 0.0 });
    }
    match engine {
        Engine::Exact => {
            // Beyond the budget the conditioned ensemble needs a core wide
            // enough to keep the shell enumerable.
            let core = if ball.len() > ENUMERATION_BUDGET { Region::ball(Site::ORIGIN, 1) } else { Region::ball(Site::ORIGIN, 0) };
            let (p, m) = exact_magnetization_pair(&ball, core.sites(), coupling, field, params)?;
            let i = core.index_of(Site::ORIGIN).unwrap();
            Ok(0.5 * (p[i] - m[i]))
        }
        Engine::Mcmc(settings) => {
            let s = HeatBathSettings { seed: chain_seed, ..*settings };
            let chains = crate::gibbs::coupled_heat_bath(&ball, coupling, field, params, &s)?;
            let i = ball.index_of(Site::ORIGIN).unwrap();
            Ok(0.5 * (chains.plus.estimates[i] - chains.minus.estimates[i]))
        }
    }
}

fn mean_series(
    scales: &[u32],
    per_replica: &[Vec<f64>],
    params: &DisorderParams,
    coupling: &CouplingSpec,
    base_seed: u64,
) -> EstimateSeries {
    let n = per_replica.len();
    let mut mean = Vec::new();
    let mut std_error = Vec::new();
    let mut wilson = Vec::new();
    for k in 0..scales.len() {
        let xs: Vec<f64> = per_replica.iter().map(|r| r[k]).collect();
        let e = MeanEstimate::from_samples(&xs);
        mean.push(e.mean);
        std_error.push(e.std_error);
        let hits = xs.iter().filter(|&&x| x > 0.5).count();
        wilson.push(wilson_interval(hits, n, 1.959_963_984_540_054));
    }
    EstimateSeries {
        scales: scales.to_vec(),
        mean,
        std_error,
        replicas: vec![n; scales.len()],
        wilson: (params.temperature == 0.0).then_some(wilson),
        params: *params,
        coupling: coupling.clone(),
        base_seed,
    }
}

/// Per-replica values of the origin gap at each scale, with one field per
/// replica shared by all scales.
pub fn m_scan_replicas(
    scales: &[u32],
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    base_seed: u64,
    engine: &Engine,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    require_replicas(replicas, 2)?;
    if scales.is_empty() || scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("scales must be non-empty and strictly increasing"));
    }
    let outer = Region::ball(Site::ORIGIN, *scales.last().unwrap());
    par_replicas(replicas, |r| {
        let seed = replica_seed(base_seed, r);
        let field = sample_field(&outer, seed);
        scales
            .iter()
            .map(|&l| origin_gap(l, &field, params, coupling, engine, derive_seed(seed, l as u64)))
            .collect()
    })
}

/// `m(L)` over a list of scales with common random numbers.
pub fn m_scan(
    scales: &[u32],
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    base_seed: u64,
    engine: &Engine,
) -> Result<EstimateSeries> {
    let per = m_scan_replicas(scales, params, coupling, replicas, base_seed, engine)?;
    Ok(mean_series(scales, &per, params, coupling, base_seed))
}

/// `m(L)` at one scale.
pub fn estimate_m(
    scale: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    base_seed: u64,
    engine: &Engine,
) -> Result<MeanEstimate> {
    let s = m_scan(&[scale], params, coupling, replicas, base_seed, engine)?;
    Ok(MeanEstimate { mean: s.mean[0], std_error: s.std_error[0], replicas })
}

/// Sample proportion with normal and Wilson errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub p: f64,
    pub std_error: f64,
    pub wilson: (f64, f64),
    pub successes: usize,
    pub trials: usize,
}

impl Proportion {
    pub fn new(successes: usize, trials: usize) -> Self {
        let p = successes as f64 / trials as f64;
        Proportion {
            p,
            std_error: (p * (1.0 - p) / trials as f64).sqrt(),
            wilson: wilson_interval(successes, trials, 1.959_963_984_540_054),
            successes,
            trials,
        }
    }
}

/// Moments of `D_ell`, the anti-concentration probability and its lower bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub ell: u32,
    pub replicas: usize,
    pub mean_d: MeanEstimate,
    pub var_d: f64,
    /// `P(D_ell < mean_d / 2)`; `None` when the mean vanishes.
    pub anti_concentration: Option<Proportion>,
    pub m_lower_scale: MeanEstimate,
    pub m_upper_scale: MeanEstimate,
    /// `chi(4J/eps |d_v Lambda(2l)| / sqrt|Lambda(l)| * m(l-1) / m(4l))`.
    pub bound: Option<f64>,
    pub zero_mean: bool,
}

/// Zero-temperature `D_ell` moments; `m(ell - 1)` and `m(4 ell)` are taken
/// from the same fields.
pub fn variance_d(
    ell: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    base_seed: u64,
) -> Result<VarianceReport> {
    require_replicas(replicas, 100)?;
    if params.temperature != 0.0 {
        return Err(Error::domain("variance_d is a zero-temperature estimator"));
    }
    let j = coupling
        .nearest_neighbor_strength()
        .ok_or_else(|| Error::UnsupportedModel("the anti-concentration bound is stated for nearest-neighbour J".into()))?;
    if ell == 0 {
        return Err(Error::domain("scale ell must be >= 1"));
    }
    let outer = Region::ball(Site::ORIGIN, 4 * ell);
    let rows = par_replicas(replicas, |r| {
        let field = sample_field(&outer, replica_seed(base_seed, r));
        let d = d_ell(ell, &field, params, coupling)? as f64;
        let lo = origin_gap(ell - 1, &field, params, coupling, &Engine::Exact, 0)?;
        let hi = origin_gap(4 * ell, &field, params, coupling, &Engine::Exact, 0)?;
        Ok((d, lo, hi))
    })?;
    let ds: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mean_d = MeanEstimate::from_samples(&ds);
    let var_d = ds.iter().map(|d| (d - mean_d.mean).powi(2)).sum::<f64>() / (replicas - 1) as f64;
    let m_lower_scale = MeanEstimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let m_upper_scale = MeanEstimate::from_samples(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let zero_mean = mean_d.mean == 0.0;
    let anti_concentration =
        (!zero_mean).then(|| Proportion::new(ds.iter().filter(|&&d| d < 0.5 * mean_d.mean).count(), replicas));
    let boundary = Region::ball(Site::ORIGIN, 2 * ell).vertex_boundary(coupling).len() as f64;
    let core = Region::ball(Site::ORIGIN, ell).len() as f64;
    let bound = (m_upper_scale.mean > 0.0).then(|| {
        chi(4.0 * j / params.epsilon * boundary / core.sqrt() * m_lower_scale.mean / m_upper_scale.mean)
    });
    Ok(VarianceReport { ell, replicas, mean_d, var_d, anti_concentration, m_lower_scale, m_upper_scale, bound, zero_mean })
}

/// Finite-volume proxy for the covariance bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub u: Site,
    pub v: Site,
    pub ell: u32,
    pub box_side: u32,
    pub replicas: usize,
    /// `E <s_u; s_v>`, against `2 m(ell)`.
    pub truncated: BoundCheck,
    /// `Cov(<s_u>, <s_v>)`, against `4 m(ell)`; inconclusive when `d(u,v) < 2 ell + R`.
    pub covariance: BoundCheck,
    pub m_hat: MeanEstimate,
    pub note: String,
}

/// Settings for the covariance proxy at positive temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub sweeps: usize,
    pub burn_in: usize,
}

/// Side `4 (2 ell + R)` box centred at the origin.
pub fn proxy_box(ell: u32, coupling: &CouplingSpec) -> Region {
    let side = 4 * (2 * ell + coupling.range());
    let half = (side / 2) as i32;
    Region::square(Site::new(-half, -half), side)
}

pub fn covariance_bounds(
    u: Site,
    v: Site,
    ell: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    base_seed: u64,
    chain: &ChainSettings,
) -> Result<CovarianceReport> {
    require_replicas(replicas, 2)?;
    let d = u.distance(v);
    if d <= ell {
        return Err(Error::domain(format!("d(u,v) = {d} must exceed ell = {ell}")));
    }
    let region = proxy_box(ell, coupling);
    if !region.contains(u) || !region.contains(v) {
        return Err(Error::domain("u and v must lie in the proxy box"));
    }
    let (iu, iv) = (region.index_of(u).unwrap(), region.index_of(v).unwrap());
    let ball = Region::ball(Site::ORIGIN, ell);
    let rows = par_replicas(replicas, |r| {
        let seed = replica_seed(base_seed, r);
        let field = sample_field(&region, seed);
        let (su, sv, suv) = if params.temperature == 0.0 {
            let gs = minimize(&region, &BoundaryCondition::PLUS, coupling, &field, params)?;
            let (a, b) = (gs.config.spins()[iu].value(), gs.config.spins()[iv].value());
            (a, b, a * b)
        } else {
            let est = heat_bath_chain(
                &region,
                &BoundaryCondition::PLUS,
                coupling,
                &field,
                params,
                chain.sweeps,
                chain.burn_in,
                derive_seed(seed, 0x636f_76),
                &[(iu, iv)],
            )?;
            (est.magnetization.estimates[iu], est.magnetization.estimates[iv], est.pair_means[0])
        };
        // m(ell) from an independent field on the ball, same replica index.
        let m_field = sample_field(&ball, derive_seed(seed, 0x6d68_6174));
        let gap = if params.temperature == 0.0 || ell <= 3 {
            origin_gap(ell, &m_field, params, coupling, &Engine::Exact, 0)?
        } else {
            let s = HeatBathSettings {
                sweeps: chain.sweeps,
                burn_in: crate::gibbs::BurnIn::Fixed(chain.burn_in),
                seed: derive_seed(seed, 1),
            };
            origin_gap(ell, &m_field, params, coupling, &Engine::Mcmc(s), s.seed)?
        };
        Ok((su, sv, suv, gap))
    })?;
    let n = replicas as f64;
    let trunc: Vec<f64> = rows.iter().map(|r| r.2 - r.0 * r.1).collect();
    let truncated = MeanEstimate::from_samples(&trunc);
    let mu = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mv = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let prods: Vec<f64> = rows.iter().map(|r| (r.0 - mu) * (r.1 - mv)).collect();
    let cov = MeanEstimate::from_samples(&prods);
    let cov_value = cov.mean * n / (n - 1.0);
    let m_hat = MeanEstimate::from_samples(&rows.iter().map(|r| r.3).collect::<Vec<_>>());
    let truncated_check = BoundCheck::upper(truncated.mean, truncated.std_error, 2.0 * m_hat.mean, 2.0 * m_hat.std_error);
    let mut covariance = BoundCheck::upper(cov_value, cov.std_error, 4.0 * m_hat.mean, 4.0 * m_hat.std_error);
    let mut note = format!(
        "finite proxy: side-{} box with plus boundary; inequalities hold in any Gibbs state",
        region_side(&region)
    );
    if d < 2 * ell + coupling.range() {
        covariance.verdict = Verdict::Inconclusive;
        note.push_str("; covariance bound needs d(u,v) >= 2 ell + R");
    }
    Ok(CovarianceReport {
        u,
        v,
        ell,
        box_side: region_side(&region),
        replicas,
        truncated: truncated_check,
        covariance,
        m_hat,
        note,
    })
}

fn region_side(r: &Region) -> u32 {
    match r.kind() {
        crate::lattice::RegionKind::Box { width, .. } => *width,
        _ => 0,
    }
}

/// Positive-temperature `D_ell` for a replica, re-exported for drivers.
pub fn d_post_replica(
    ell: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    seed: u64,
    engine: &Engine,
) -> Result<f64> {
    let field = sample_field(&Region::ball(Site::ORIGIN, 3 * ell), seed);
    Ok(d_post(ell, &field, params, coupling, engine)?.value)
}

/// Output of the descending stretch construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StretchResult {
    pub n: usize,
    pub k: usize,
    /// Number of descending steps taken.
    pub steps: usize,
}

/// `g_j = log p_j + 2 alpha log j`; `p_j > p_i (i/j)^{2 alpha}` iff `g_j > g_i`.
fn stretch_keys(p: &[f64], alpha: f64) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, &x)| x.ln() + 2.0 * alpha * ((i + 1) as f64).ln())
        .collect()
}

fn check_sequence(p: &[f64], k: usize, alpha: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::domain("alpha must be > 0"));
    }
    if k == 0 || k > p.len() {
        return Err(Error::domain(format!("k = {k} outside 1..={}", p.len())));
    }
    if p[..k].iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::domain("sequence values must lie in [0, 1]"));
    }
    if p[..k].windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::domain("sequence must be non-increasing"));
    }
    if p[k - 1] < (k as f64).powf(-alpha) {
        return Err(Error::Precondition(format!("p_k = {} < k^-alpha", p[k - 1])));
    }
    Ok(())
}

/// Descending construction `k = k_0 > k_1 > ... > k_t`: each `k_m` is the
/// largest `j < k_{m-1}` with `p_j > p_{k_{m-1}} (k_{m-1}/j)^{2 alpha}`;
/// returns `n = k_t`. `p[0]` is `p_1`.
pub fn comp_decay_stretch(p: &[f64], alpha: f64, k: usize) -> Result<StretchResult> {
    check_sequence(p, k, alpha)?;
    let g = stretch_keys(&p[..k], alpha);
    let mut current = k;
    let mut steps = 0;
    let mut j = k - 1;
    while j >= 1 {
        if g[j - 1] > g[current - 1] {
            current = j;
            steps += 1;
        }
        j -= 1;
    }
    Ok(StretchResult { n: current, k, steps })
}

/// `comp_decay_stretch` for every `k` in `1..=p.len()` at once; entries are
/// `None` where `p_k < k^-alpha`.
pub fn comp_decay_stretch_all(p: &[f64], alpha: f64) -> Result<Vec<Option<StretchResult>>> {
    check_sequence(p, 1, alpha)?;
    if p.windows(2).any(|w| w[1] > w[0]) || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::domain("sequence must be non-increasing in [0, 1]"));
    }
    let g = stretch_keys(p, alpha);
    // prev[i]: largest j < i with g_j > g_i, the next step of the construction.
    let mut prev = vec![usize::MAX; p.len()];
    let mut stack: Vec<usize> = Vec::new();
    let mut end = vec![0usize; p.len()];
    let mut steps = vec![0usize; p.len()];
    for i in 0..p.len() {
        while let Some(&top) = stack.last() {
            if g[top] > g[i] {
                break;
            }
            stack.pop();
        }
        if let Some(&top) = stack.last() {
            prev[i] = top;
            end[i] = end[top];
            steps[i] = steps[top] + 1;
        } else {
            end[i] = i;
        }
        stack.push(i);
    }
    Ok((0..p.len())
        .map(|i| {
            let k = i + 1;
            (p[i] >= (k as f64).powf(-alpha)).then_some(StretchResult { n: end[i] + 1, k, steps: steps[i] })
        })
        .collect())
}

/// `q` with `int_{|x|>q} w = p`, and the variational minimum `2q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinIntegral {
    pub q: f64,
    pub value: f64,
}

fn simpson_adaptive(w: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(w: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (w(lm), w(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(w, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1) + rec(w, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (w(a), w(b), w(m));
    rec(w, a, fa, b, fb, m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// Solves the tail equation for a symmetric density non-increasing in `|x|`, by bisection.
pub fn min_integral_value(w: &dyn Fn(f64) -> f64, p: f64) -> Result<MinIntegral> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(MinIntegral { q: 0.0, value: 0.0 });
    }
    let tail = |q: f64| 1.0 - 2.0 * simpson_adaptive(w, 0.0, q, 1e-14);
    let mut hi = 1.0;
    while tail(hi) > p {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::domain("tail equation has no solution below 1e6"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(MinIntegral { q, value: 2.0 * q })
}

/// `min_integral_value` for the standard Gaussian density, where the tail is `chi`.
pub fn min_integral_gaussian(p: f64) -> Result<MinIntegral> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(MinIntegral { q: 0.0, value: 0.0 });
    }
    let (mut lo, mut hi) = (0.0, 40.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if chi(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(MinIntegral { q, value: 2.0 * q })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    /// Residual sum of squares in `log m`.
    pub rss: f64,
}

pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    LinearFit { slope, slope_se, intercept, rss }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    Power,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `log m` against `log L`.
    pub power: LinearFit,
    /// `log m` against `L`.
    pub exponential: LinearFit,
    pub preferred: DecayModel,
    pub used_scales: Vec<u32>,
    pub warnings: Vec<String>,
    /// Nearest-neighbour `gamma`, reported for reference only.
    pub gamma_reference: Option<f64>,
}

/// Least-squares power-law and exponential fits; non-positive means are excluded.
pub fn decay_fit(series: &EstimateSeries) -> Result<DecayFit> {
    let mut warnings = Vec::new();
    let mut used = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (&l, &m) in series.scales.iter().zip(&series.mean) {
        if m > 0.0 && l > 0 {
            used.push(l);
            xs.push(l as f64);
            ys.push(m.ln());
        } else {
            warnings.push(format!("scale {l} excluded: mean {m} is not positive"));
        }
    }
    if used.len() < 4 {
        return Err(Error::Precondition(format!("decay fit needs >= 4 positive scales, found {}", used.len())));
    }
    let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let power = least_squares(&logs, &ys);
    let exponential = least_squares(&xs, &ys);
    let preferred = if exponential.rss < power.rss { DecayModel::Exponential } else { DecayModel::Power };
    Ok(DecayFit {
        power,
        exponential,
        preferred,
        used_scales: used,
        warnings,
        gamma_reference: gamma_for(&series.coupling, series.params.epsilon),
    })
}

/// Diagnostic evaluation of the conditional variance bound at `L = 4 ell`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarBoundReport {
    pub ell: u32,
    pub scale: u32,
    pub alpha: f64,
    pub hypotheses_hold: bool,
    pub reasons: Vec<String>,
    /// `Var(D) / E(D)^2`.
    pub ratio: Option<f64>,
    pub bound: f64,
    pub verdict: Verdict,
}

/// `Var(D_ell) <= 241 alpha E(D_ell)^2` when `m(L) >= L^{-2 alpha}` and
/// `m(L) <= m(j) <= m(L) (L/j)^{2 alpha}` for `1 <= j <= L = 4 ell`.
///
/// The statement holds only beyond an unspecified `L_0`, so a ratio above
/// the bound is inconclusive rather than a failure.
pub fn var_bound_report(
    series: &EstimateSeries,
    ell: u32,
    alpha: f64,
    mean_d: f64,
    var_d: f64,
) -> Result<VarBoundReport> {
    if !(alpha > 0.0 && alpha <= 0.25) {
        return Err(Error::domain(format!("alpha must lie in (0, 1/4], got {alpha}")));
    }
    let scale = 4 * ell;
    let bound = 241.0 * alpha;
    let mut reasons = Vec::new();
    let mut values = Vec::with_capacity(scale as usize);
    for j in 1..=scale {
        match series.value_at(j) {
            Some(m) => values.push(m),
            None => reasons.push(format!("m({j}) not measured")),
        }
    }
    let ratio = (mean_d > 0.0).then(|| var_d / (mean_d * mean_d));
    if ratio.is_none() {
        reasons.push("E(D) = 0".into());
    }
    if reasons.is_empty() {
        let m_l = values[scale as usize - 1];
        if m_l < (scale as f64).powf(-2.0 * alpha) {
            reasons.push(format!("m({scale}) = {m_l} < L^(-2 alpha)"));
        }
        for (i, &m) in values.iter().enumerate() {
            let j = (i + 1) as f64;
            if m < m_l || m > m_l * (scale as f64 / j).powf(2.0 * alpha) {
                reasons.push(format!("stretch inequality fails at j = {}", i + 1));
            }
        }
    }
    let hypotheses_hold = reasons.is_empty();
    let verdict = match (hypotheses_hold, ratio) {
        (true, Some(r)) if r <= bound => Verdict::Pass,
        _ => Verdict::Inconclusive,
    };
    Ok(VarBoundReport { ell, scale, alpha, hypotheses_hold, reasons, ratio, bound, verdict })
}

/// Ground-state problem on the proxy box, for drivers exporting grids.
pub fn proxy_problem(
    ell: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    seed: u64,
) -> Result<Problem> {
    let region = proxy_box(ell, coupling);
    let field = sample_field(&region, seed);
    Problem::new(&region, &BoundaryCondition::PLUS, coupling, &field, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn() -> CouplingSpec {
        CouplingSpec::nearest_neighbor(1.0).unwrap()
    }

    fn series(scales: Vec<u32>, mean: Vec<f64>) -> EstimateSeries {
        let n = scales.len();
        EstimateSeries {
            scales,
            mean,
            std_error: vec![0.0; n],
            replicas: vec![100; n],
            wilson: None,
            params: DisorderParams::ground(0.0, 1.0).unwrap(),
            coupling: nn(),
            base_seed: 0,
        }
    }

    #[test]
    fn synthetic_power_law_fit() {
        let scales: Vec<u32> = vec![1, 2, 4, 8, 16, 32];
        let mean = scales.iter().map(|&l| (l as f64).powf(-0.5)).collect();
        let fit = decay_fit(&series(scales, mean)).unwrap();
        assert!((fit.power.slope + 0.5).abs() < 0.01);
        assert!(fit.power.rss < 1e-20 && fit.exponential.rss > 0.1);
        assert_eq!(fit.preferred, DecayModel::Power);
    }

    #[test]
    fn synthetic_exponential_fit() {
        let scales: Vec<u32> = vec![1, 2, 4, 8, 16];
        let mean = scales.iter().map(|&l| (-(l as f64) / 4.0).exp()).collect();
        let fit = decay_fit(&series(scales, mean)).unwrap();
        assert!((fit.exponential.slope + 0.25).abs() < 1e-12);
        assert_eq!(fit.preferred, DecayModel::Exponential);
    }

    #[test]
    fn fit_excludes_zero_means() {
        let fit = decay_fit(&series(vec![1, 2, 4, 8, 16], vec![0.5, 0.3, 0.1, 0.02, 0.0])).unwrap();
        assert_eq!(fit.used_scales, vec![1, 2, 4, 8]);
        assert_eq!(fit.warnings.len(), 1);
        assert!(decay_fit(&series(vec![1, 2, 4, 8], vec![0.5, 0.3, 0.0, 0.0])).is_err());
    }

    #[test]
    fn stretch_constant_sequence() {
        let p = vec![1.0; 50];
        assert_eq!(comp_decay_stretch(&p, 0.3, 50).unwrap().n, 50);
    }

    #[test]
    fn stretch_power_sequence() {
        let alpha = 0.4;
        let p: Vec<f64> = (1..=500).map(|j| (j as f64).powf(-alpha)).collect();
        for k in 1..=500 {
            let r = comp_decay_stretch(&p, alpha, k).unwrap();
            assert!((r.n as f64) >= (k as f64).sqrt() && r.n <= k);
            for j in 1..=r.n {
                let (pn, pj) = (p[r.n - 1], p[j - 1]);
                assert!(pn <= pj && pj <= pn * (r.n as f64 / j as f64).powf(2.0 * alpha) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn stretch_batch_matches_single() {
        let alpha = 0.3;
        let k_max = 2000;
        let p: Vec<f64> = (1..=k_max)
            .map(|j| ((j as f64).powf(-alpha / 2.0)).max((k_max as f64).powf(-alpha)))
            .collect();
        let all = comp_decay_stretch_all(&p, alpha).unwrap();
        for k in 1..=k_max {
            match all[k - 1] {
                Some(r) => assert_eq!(r, comp_decay_stretch(&p, alpha, k).unwrap()),
                None => assert!(comp_decay_stretch(&p, alpha, k).is_err()),
            }
        }
    }

    #[test]
    fn stretch_errors() {
        assert!(matches!(comp_decay_stretch(&[0.5, 0.6], 0.5, 2), Err(Error::Domain(_))));
        assert!(matches!(comp_decay_stretch(&[0.5, 0.001], 0.5, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn min_integral_gaussian_inverse() {
        let r = min_integral_gaussian(chi(1.0)).unwrap();
        assert!((r.q - 1.0).abs() < 1e-8);
        let g = min_integral_value(&crate::disorder::phi, chi(1.0)).unwrap();
        assert!((g.q - 1.0).abs() < 1e-8);
        assert_eq!(min_integral_value(&crate::disorder::phi, 1.0).unwrap().value, 0.0);
        assert!(min_integral_value(&crate::disorder::phi, 0.0).is_err());
        assert!(min_integral_value(&crate::disorder::phi, 1.5).is_err());
    }

    #[test]
    fn var_bound_synthetic() {
        let m: Vec<f64> = vec![0.9; 8];
        let s = series((1..=8).collect(), m);
        let r = var_bound_report(&s, 2, 0.2, 10.0, 5.0).unwrap();
        assert!(r.hypotheses_hold);
        assert_eq!(r.verdict, Verdict::Pass);
        let fast: Vec<f64> = (1..=8).map(|j| (-(j as f64) * 2.0).exp()).collect();
        let r = var_bound_report(&series((1..=8).collect(), fast), 2, 0.2, 10.0, 5.0).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(!r.hypotheses_hold);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(3, 100, 1.96);
        assert!(lo < 0.03 && 0.03 < hi && lo > 0.0);
        let (lo, _) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
    }
}
