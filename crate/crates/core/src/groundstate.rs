//! Exact zero-temperature ground states via minimum cut, and the
//! observables built from them: `E^{s,s'}`, `G`, `T`, `D`, `B`, flip
//! thresholds and avalanches.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::disorder::{shift_field, DisorderParams, FieldSample};
use crate::error::{Error, Result};
use crate::lattice::{CouplingSpec, Region, RegionGraph, RegionKind, Site};
use crate::maxflow::FlowNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Spin {
    Minus,
    Plus,
}

impl Spin {
    pub fn value(self) -> f64 {
        match self {
            Spin::Plus => 1.0,
            Spin::Minus => -1.0,
        }
    }

    /// `Plus` iff `x > 0`.
    pub fn from_sign(x: f64) -> Spin {
        if x > 0.0 {
            Spin::Plus
        } else {
            Spin::Minus
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Spin::Plus => '+',
            Spin::Minus => '-',
        }
    }
}

impl std::ops::Neg for Spin {
    type Output = Spin;
    fn neg(self) -> Spin {
        match self {
            Spin::Plus => Spin::Minus,
            Spin::Minus => Spin::Plus,
        }
    }
}

/// Boundary spins on the vertex boundary of a region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Uniform(Spin),
    /// Annulus only: `outer` on the part outside `Lambda(3 ell)`, `inner` on
    /// the part inside `Lambda(ell)`.
    Mixed { outer: Spin, inner: Spin },
    /// Must cover the vertex boundary; entries elsewhere are ignored.
    Explicit(BTreeMap<Site, Spin>),
}

impl BoundaryCondition {
    pub const PLUS: BoundaryCondition = BoundaryCondition::Uniform(Spin::Plus);
    pub const MINUS: BoundaryCondition = BoundaryCondition::Uniform(Spin::Minus);

    /// Spins aligned with `boundary_sites`.
    pub fn resolve(&self, region: &Region, boundary_sites: &[Site]) -> Result<Vec<Spin>> {
        match self {
            BoundaryCondition::Uniform(s) => Ok(vec![*s; boundary_sites.len()]),
            BoundaryCondition::Mixed { outer, inner } => {
                let ell = match region.kind() {
                    RegionKind::Annulus { ell } => *ell,
                    _ => return Err(Error::domain("mixed boundary condition needs an annulus region")),
                };
                let core = Region::ball(Site::ORIGIN, ell);
                Ok(boundary_sites
                    .iter()
                    .map(|&s| if core.contains(s) { *inner } else { *outer })
                    .collect())
            }
            BoundaryCondition::Explicit(map) => boundary_sites
                .iter()
                .map(|s| {
                    map.get(s)
                        .copied()
                        .ok_or_else(|| Error::domain(format!("boundary condition misses site ({}, {})", s.x, s.y)))
                })
                .collect(),
        }
    }

    /// Spin-flipped boundary condition.
    pub fn flipped(&self) -> BoundaryCondition {
        match self {
            BoundaryCondition::Uniform(s) => BoundaryCondition::Uniform(-*s),
            BoundaryCondition::Mixed { outer, inner } => BoundaryCondition::Mixed { outer: -*outer, inner: -*inner },
            BoundaryCondition::Explicit(m) => {
                BoundaryCondition::Explicit(m.iter().map(|(&k, &v)| (k, -v)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinConfig {
    region: Region,
    spins: Vec<Spin>,
}

impl SpinConfig {
    pub fn new(region: Region, spins: Vec<Spin>) -> Result<Self> {
        if spins.len() != region.len() {
            return Err(Error::domain(format!("{} spins for {} sites", spins.len(), region.len())));
        }
        Ok(SpinConfig { region, spins })
    }

    pub fn uniform(region: Region, spin: Spin) -> Self {
        let spins = vec![spin; region.len()];
        SpinConfig { region, spins }
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn spin_at(&self, site: Site) -> Option<Spin> {
        self.region.index_of(site).map(|i| self.spins[i])
    }

    /// Pointwise `self >= other` on the sites they share.
    pub fn dominates(&self, other: &SpinConfig) -> bool {
        self.region
            .sites()
            .iter()
            .zip(&self.spins)
            .all(|(&s, &a)| other.spin_at(s).map_or(true, |b| a >= b))
    }

    pub fn to_json(&self) -> Vec<(i32, i32, i8)> {
        self.region
            .sites()
            .iter()
            .zip(&self.spins)
            .map(|(s, &v)| (s.x, s.y, v.value() as i8))
            .collect()
    }

    /// One row per `y` (top row is the largest `y`); `.` marks sites outside the region.
    pub fn to_text_grid(&self) -> String {
        let sites = self.region.sites();
        if sites.is_empty() {
            return String::new();
        }
        let (x0, x1) = (sites.iter().map(|s| s.x).min().unwrap(), sites.iter().map(|s| s.x).max().unwrap());
        let (y0, y1) = (sites.iter().map(|s| s.y).min().unwrap(), sites.iter().map(|s| s.y).max().unwrap());
        let mut out = String::new();
        for y in (y0..=y1).rev() {
            for x in x0..=x1 {
                out.push(self.spin_at(Site::new(x, y)).map_or('.', Spin::symbol));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text_grid())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundStateResult {
    pub config: SpinConfig,
    pub energy: f64,
    /// False when the residual graph admits a second minimum cut.
    pub unique_within_tol: bool,
}

/// A region with boundary condition and field, reduced to local fields.
///
/// `H(s) = -sum_{i<j} J_ij s_i s_j - sum_i b_i s_i`, with
/// `b_i = h + eps eta_i + sum_{boundary} J tau`.
#[derive(Clone, Debug)]
pub struct Problem {
    region: Region,
    graph: RegionGraph,
    site_field: Vec<f64>,
    boundary_field: Vec<f64>,
}

impl Problem {
    pub fn new(
        region: &Region,
        bc: &BoundaryCondition,
        coupling: &CouplingSpec,
        field: &FieldSample,
        params: &DisorderParams,
    ) -> Result<Self> {
        params.validate()?;
        field.require_covers(region)?;
        let graph = RegionGraph::new(region, coupling);
        let tau = bc.resolve(region, &graph.boundary_sites)?;
        let site_field = region
            .sites()
            .iter()
            .map(|&s| params.h + params.epsilon * field.value_at(s).unwrap())
            .collect();
        let boundary_field = graph
            .boundary
            .iter()
            .map(|nb| nb.iter().map(|&(k, j)| j * tau[k].value()).sum())
            .collect();
        Ok(Problem { region: region.clone(), graph, site_field, boundary_field })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub(crate) fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    /// `b_i`, optionally plus `delta` on masked sites.
    pub(crate) fn local_fields(&self, shift: Option<(&[bool], f64)>) -> Vec<f64> {
        let mut b: Vec<f64> = self.site_field.iter().zip(&self.boundary_field).map(|(a, c)| a + c).collect();
        if let Some((mask, delta)) = shift {
            for (bi, &m) in b.iter_mut().zip(mask) {
                if m {
                    *bi += delta;
                }
            }
        }
        b
    }

    pub(crate) fn energy_with(&self, spins: &[Spin], b: &[f64]) -> f64 {
        let pair: f64 = self
            .graph
            .internal_edges()
            .map(|(i, j, w)| w * spins[i].value() * spins[j].value())
            .sum();
        let lin: f64 = spins.iter().zip(b).map(|(s, bi)| s.value() * bi).sum();
        -pair - lin
    }

    pub fn energy(&self, spins: &[Spin]) -> f64 {
        self.energy_with(spins, &self.local_fields(None))
    }

    /// Rough magnitude of `H`, used to scale tolerances.
    pub(crate) fn energy_scale(&self, b: &[f64]) -> f64 {
        let pairs: f64 = self.graph.internal_edges().map(|(_, _, w)| w.abs()).sum();
        1.0 + pairs + b.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Minimum cut for local fields `b`. Returns spins and a uniqueness flag.
    pub(crate) fn solve_fields(&self, b: &[f64]) -> (Vec<Spin>, bool) {
        let n = self.len();
        let (s, t) = (n, n + 1);
        let mut net = FlowNetwork::new(n + 2);
        let mut total = 0.0;
        for (i, &bi) in b.iter().enumerate() {
            if bi > 0.0 {
                net.add_arc_pair(s, i, 2.0 * bi, 0.0);
            } else if bi < 0.0 {
                net.add_arc_pair(i, t, -2.0 * bi, 0.0);
            }
            total += 2.0 * bi.abs();
        }
        for (i, j, w) in self.graph.internal_edges() {
            net.add_arc_pair(i, j, 2.0 * w, 2.0 * w);
            total += 4.0 * w;
        }
        let eps = 1e-12 * total.max(f64::MIN_POSITIVE);
        net.max_flow(s, t, eps);
        let from_s = net.reachable_from(s, eps);
        let to_t = net.reaching(t, eps);
        let spins = (0..n).map(|i| if from_s[i] { Spin::Plus } else { Spin::Minus }).collect();
        let unique = (0..n).all(|i| from_s[i] || to_t[i]);
        (spins, unique)
    }

    pub fn minimize(&self) -> GroundStateResult {
        self.minimize_with(&self.local_fields(None))
    }

    pub(crate) fn minimize_with(&self, b: &[f64]) -> GroundStateResult {
        let (spins, unique) = self.solve_fields(b);
        let energy = self.energy_with(&spins, b);
        GroundStateResult {
            config: SpinConfig { region: self.region.clone(), spins },
            energy,
            unique_within_tol: unique,
        }
    }
}

/// `H^{Lambda,tau}(sigma)` with each internal pair counted once.
pub fn hamiltonian_energy(
    config: &SpinConfig,
    bc: &BoundaryCondition,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
) -> Result<f64> {
    let problem = Problem::new(config.region(), bc, coupling, field, params)?;
    Ok(problem.energy(config.spins()))
}

/// Exact global minimizer of `H^{Lambda,tau}`.
///
/// Ties are broken toward `-1`: sites not reachable from the source in the
/// final residual graph get spin `-1`.
pub fn minimize(
    region: &Region,
    bc: &BoundaryCondition,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
) -> Result<GroundStateResult> {
    coupling.require_ferromagnetic()?;
    Ok(Problem::new(region, bc, coupling, field, params)?.minimize())
}

/// Annulus ground-state energies, indexed `(outer, inner)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourEnergies {
    pub pp: f64,
    pub mm: f64,
    pub pm: f64,
    pub mp: f64,
}

impl FourEnergies {
    /// `-[E++ + E-- - E+- - E-+]`.
    pub fn tension(&self) -> f64 {
        -(self.pp + self.mm - self.pm - self.mp)
    }
}

/// Every zero-temperature observable at scale `ell` from one set of solves.
#[derive(Clone, Debug)]
pub struct ScaleObservables {
    pub ell: u32,
    pub d: usize,
    pub b: f64,
    pub g: f64,
    pub energies: FourEnergies,
    pub tension: f64,
    pub disagreement: Vec<Site>,
    pub plus: SpinConfig,
    pub minus: SpinConfig,
    /// All six solves reported a unique minimizer.
    pub unique: bool,
}

fn check_scale(ell: u32, field: &FieldSample, coupling: &CouplingSpec) -> Result<()> {
    if ell == 0 {
        return Err(Error::domain("scale ell must be >= 1"));
    }
    coupling.require_ferromagnetic()?;
    field.require_covers(&Region::ball(Site::ORIGIN, 3 * ell))
}

struct BallStates {
    plus: GroundStateResult,
    minus: GroundStateResult,
}

fn ball_states(ell: u32, field: &FieldSample, params: &DisorderParams, coupling: &CouplingSpec) -> Result<BallStates> {
    let ball = Region::ball(Site::ORIGIN, 3 * ell);
    let plus = Problem::new(&ball, &BoundaryCondition::PLUS, coupling, field, params)?.minimize();
    let minus = Problem::new(&ball, &BoundaryCondition::MINUS, coupling, field, params)?.minimize();
    Ok(BallStates { plus, minus })
}

fn disagreement_of(ell: u32, states: &BallStates) -> Vec<Site> {
    Region::ball(Site::ORIGIN, ell)
        .sites()
        .iter()
        .copied()
        .filter(|&s| states.plus.config.spin_at(s) != states.minus.config.spin_at(s))
        .collect()
}

pub fn scale_observables(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<ScaleObservables> {
    check_scale(ell, field, coupling)?;
    let states = ball_states(ell, field, params, coupling)?;
    let disagreement = disagreement_of(ell, &states);
    let annulus = Region::annulus(ell)?;
    let solve = |outer, inner| -> Result<GroundStateResult> {
        Ok(Problem::new(&annulus, &BoundaryCondition::Mixed { outer, inner }, coupling, field, params)?.minimize())
    };
    let pp = solve(Spin::Plus, Spin::Plus)?;
    let mm = solve(Spin::Minus, Spin::Minus)?;
    let pm = solve(Spin::Plus, Spin::Minus)?;
    let mp = solve(Spin::Minus, Spin::Plus)?;
    let energies = FourEnergies { pp: pp.energy, mm: mm.energy, pm: pm.energy, mp: mp.energy };
    let b = separating_strength(ell, coupling, &pp.config, &mm.config);
    let unique = [&states.plus, &states.minus, &pp, &mm, &pm, &mp].iter().all(|r| r.unique_within_tol);
    Ok(ScaleObservables {
        ell,
        d: disagreement.len(),
        b,
        g: -(states.plus.energy - states.minus.energy),
        energies,
        tension: energies.tension(),
        disagreement,
        plus: states.plus.config,
        minus: states.minus.config,
        unique,
    })
}

/// `sum_{(u,v) in d_e Lambda(2 ell)} J_uv 1[u and v both disagree]`.
///
/// A site outside the annulus (possible only when the range exceeds `ell`)
/// carries its boundary spin, which differs between the two states.
fn separating_strength(ell: u32, coupling: &CouplingSpec, plus: &SpinConfig, minus: &SpinConfig) -> f64 {
    let differs = |s: Site| match (plus.spin_at(s), minus.spin_at(s)) {
        (Some(a), Some(b)) => a != b,
        _ => true,
    };
    Region::ball(Site::ORIGIN, 2 * ell)
        .edge_boundary(coupling)
        .into_iter()
        .filter(|&(u, v)| differs(u) && differs(v))
        .map(|(u, v)| coupling.strength(v.x - u.x, v.y - u.y))
        .sum()
}

/// Sites of `Lambda(ell)` where the `+` and `-` ground states on `Lambda(3 ell)` differ.
pub fn disagreement_set(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<Vec<Site>> {
    check_scale(ell, field, coupling)?;
    Ok(disagreement_of(ell, &ball_states(ell, field, params, coupling)?))
}

/// `D_ell`.
pub fn d_ell(ell: u32, field: &FieldSample, params: &DisorderParams, coupling: &CouplingSpec) -> Result<usize> {
    disagreement_set(ell, field, params, coupling).map(|v| v.len())
}

/// `B_ell`, from the annulus ground states with uniform boundary conditions.
pub fn b_ell(ell: u32, field: &FieldSample, params: &DisorderParams, coupling: &CouplingSpec) -> Result<f64> {
    check_scale(ell, field, coupling)?;
    let annulus = Region::annulus(ell)?;
    let plus = Problem::new(&annulus, &BoundaryCondition::PLUS, coupling, field, params)?.minimize();
    let minus = Problem::new(&annulus, &BoundaryCondition::MINUS, coupling, field, params)?.minimize();
    Ok(separating_strength(ell, coupling, &plus.config, &minus.config))
}

pub fn four_energies(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<FourEnergies> {
    check_scale(ell, field, coupling)?;
    let annulus = Region::annulus(ell)?;
    let e = |outer, inner| -> Result<f64> {
        Ok(Problem::new(&annulus, &BoundaryCondition::Mixed { outer, inner }, coupling, field, params)?
            .minimize()
            .energy)
    };
    Ok(FourEnergies {
        pp: e(Spin::Plus, Spin::Plus)?,
        mm: e(Spin::Minus, Spin::Minus)?,
        pm: e(Spin::Plus, Spin::Minus)?,
        mp: e(Spin::Minus, Spin::Plus)?,
    })
}

/// `T_ell` at zero temperature.
pub fn surface_tension_t0(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<f64> {
    four_energies(ell, field, params, coupling).map(|e| e.tension())
}

/// `G_ell = -[E^+(Lambda(3 ell)) - E^-(Lambda(3 ell))]`.
pub fn g_ell(ell: u32, field: &FieldSample, params: &DisorderParams, coupling: &CouplingSpec) -> Result<f64> {
    check_scale(ell, field, coupling)?;
    let s = ball_states(ell, field, params, coupling)?;
    Ok(-(s.plus.energy - s.minus.energy))
}

/// `G(eta^{(t)}) - G(eta^{(-t)})`, which equals `T_ell` once `t` exceeds the forcing bound.
pub fn g_difference(
    ell: u32,
    t: f64,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<f64> {
    let core = Region::ball(Site::ORIGIN, ell);
    let up = shift_field(field, &core, t)?;
    let down = shift_field(field, &core, -t)?;
    Ok(g_ell(ell, &up, params, coupling)? - g_ell(ell, &down, params, coupling)?)
}

/// How flip thresholds are located.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// Intersection of the piecewise-linear energy envelope; exact breakpoints.
    Breakpoint,
    /// Interval bisection until brackets are narrower than `tol`.
    Bisection { tol: f64 },
}

/// `t^+_v`, `t^-_v` for every `v` in `Lambda(ell)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipThresholds {
    pub sites: Vec<Site>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl FlipThresholds {
    /// `sum_v (t^-_v - t^+_v) = int D_ell(eta^{(t)}) dt`.
    pub fn integral(&self) -> f64 {
        self.minus.iter().zip(&self.plus).map(|(m, p)| m - p).sum()
    }
}

/// Forcing bracket: beyond `|t| > bound`, every site of the core is forced.
pub fn forcing_bound(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<f64> {
    if !(params.epsilon > 0.0) {
        return Err(Error::domain("flip thresholds require epsilon > 0"));
    }
    let core = Region::ball(Site::ORIGIN, ell);
    field.require_covers(&core)?;
    let max_eta = core
        .sites()
        .iter()
        .map(|&s| field.value_at(s).unwrap().abs())
        .fold(0.0, f64::max);
    let sum_j: f64 = coupling.offsets().iter().map(|o| o.2.abs()).sum();
    Ok((sum_j + params.h.abs() + params.epsilon * max_eta) / params.epsilon)
}

struct Node {
    t: f64,
    spins: Vec<Spin>,
    h0: f64,
    s: i64,
}

struct ThresholdSearch<'a> {
    problem: &'a Problem,
    mask: Vec<bool>,
    epsilon: f64,
    base: Vec<f64>,
    tol: f64,
}

impl ThresholdSearch<'_> {
    fn eval(&self, t: f64) -> Node {
        let b = self.problem.local_fields(Some((&self.mask, self.epsilon * t)));
        let (spins, _) = self.problem.solve_fields(&b);
        let h0 = self.problem.energy_with(&spins, &self.base);
        let s = spins
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(sp, _)| sp.value() as i64)
            .sum();
        Node { t, spins, h0, s }
    }

    fn assign(&self, lo: &Node, hi: &Node, t: f64, out: &mut [f64]) {
        for i in 0..self.mask.len() {
            if self.mask[i] && lo.spins[i] == Spin::Minus && hi.spins[i] == Spin::Plus {
                out[i] = t;
            }
        }
    }

    fn breakpoints(&self, lo: &Node, hi: &Node, depth: u32, out: &mut [f64]) -> Result<()> {
        if lo.s >= hi.s {
            return Ok(());
        }
        let t_star = (hi.h0 - lo.h0) / (self.epsilon * (hi.s - lo.s) as f64);
        let t_star = t_star.clamp(lo.t, hi.t);
        let mid = self.eval(t_star);
        let line = lo.h0 - self.epsilon * t_star * lo.s as f64;
        let e_mid = mid.h0 - self.epsilon * t_star * mid.s as f64;
        if e_mid >= line - self.tol || (mid.s == lo.s && mid.spins == lo.spins) || (mid.s == hi.s && mid.spins == hi.spins) {
            self.assign(lo, hi, t_star, out);
            return Ok(());
        }
        if depth > 4 * self.mask.len() as u32 + 64 {
            return Err(Error::Internal("breakpoint recursion did not terminate".into()));
        }
        self.breakpoints(lo, &mid, depth + 1, out)?;
        self.breakpoints(&mid, hi, depth + 1, out)
    }

    fn bisect(&self, lo: &Node, hi: &Node, tol: f64, out: &mut [f64]) {
        let differs = (0..self.mask.len()).any(|i| self.mask[i] && lo.spins[i] != hi.spins[i]);
        if !differs {
            return;
        }
        if hi.t - lo.t <= tol {
            self.assign(lo, hi, 0.5 * (lo.t + hi.t), out);
            return;
        }
        let mid = self.eval(0.5 * (lo.t + hi.t));
        self.bisect(lo, &mid, tol, out);
        self.bisect(&mid, hi, tol, out);
    }
}

fn thresholds_for(
    problem: &Problem,
    core: &Region,
    epsilon: f64,
    bound: f64,
    method: ThresholdMethod,
) -> Result<Vec<f64>> {
    let mask: Vec<bool> = problem.region().sites().iter().map(|&s| core.contains(s)).collect();
    let base = problem.local_fields(None);
    let margin = 1.0 + 1e-6 * bound;
    let t_hi = bound + margin;
    let mut peak = base.clone();
    for (p, &m) in peak.iter_mut().zip(&mask) {
        if m {
            *p = p.abs() + epsilon * t_hi;
        }
    }
    let tol = 1e-10 * problem.energy_scale(&peak);
    let search = ThresholdSearch { problem, mask, epsilon, base, tol };
    let lo = search.eval(-t_hi);
    let hi = search.eval(t_hi);
    for (i, &m) in search.mask.iter().enumerate() {
        if m && (lo.spins[i] != Spin::Minus || hi.spins[i] != Spin::Plus) {
            return Err(Error::Internal("forcing bracket failed to fix the core".into()));
        }
    }
    let mut out = vec![f64::NAN; search.mask.len()];
    match method {
        ThresholdMethod::Breakpoint => search.breakpoints(&lo, &hi, 0, &mut out)?,
        ThresholdMethod::Bisection { tol } => {
            if !(tol > 0.0) {
                return Err(Error::domain("bisection tolerance must be > 0"));
            }
            search.bisect(&lo, &hi, tol, &mut out)
        }
    }
    let values: Vec<f64> = out
        .iter()
        .zip(&search.mask)
        .filter(|(_, &m)| m)
        .map(|(&t, _)| t)
        .collect();
    if values.iter().any(|t| t.is_nan()) {
        return Err(Error::Internal("a core site has no flip threshold".into()));
    }
    Ok(values)
}

/// Flip thresholds of `sigma^{Lambda(3 ell), +/-}` under the shift `eta^{(t)}`.
pub fn flip_thresholds(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    method: ThresholdMethod,
) -> Result<FlipThresholds> {
    check_scale(ell, field, coupling)?;
    let bound = forcing_bound(ell, field, params, coupling)?;
    let ball = Region::ball(Site::ORIGIN, 3 * ell);
    let core = Region::ball(Site::ORIGIN, ell);
    let plus = Problem::new(&ball, &BoundaryCondition::PLUS, coupling, field, params)?;
    let minus = Problem::new(&ball, &BoundaryCondition::MINUS, coupling, field, params)?;
    Ok(FlipThresholds {
        sites: core.sites().to_vec(),
        plus: thresholds_for(&plus, &core, params.epsilon, bound, method)?,
        minus: thresholds_for(&minus, &core, params.epsilon, bound, method)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvalancheStep {
    pub h: f64,
    /// Sizes of connected clusters flipped since the previous grid point, descending.
    pub clusters: Vec<usize>,
}

/// Ground states under `-` boundary conditions along an increasing `h` grid.
pub fn avalanche_scan(
    region: &Region,
    field: &FieldSample,
    coupling: &CouplingSpec,
    params: &DisorderParams,
    h_grid: &[f64],
) -> Result<Vec<AvalancheStep>> {
    coupling.require_ferromagnetic()?;
    if h_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("h grid must be strictly increasing"));
    }
    let graph = RegionGraph::new(region, coupling);
    let mut prev = vec![Spin::Minus; region.len()];
    let mut steps = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let p = params.with_h(h);
        let gs = Problem::new(region, &BoundaryCondition::MINUS, coupling, field, &p)?.minimize();
        let spins = gs.config.spins();
        if spins.iter().zip(&prev).any(|(a, b)| a < b) {
            return Err(Error::Internal(format!("ground state lost a + spin when h increased to {h}")));
        }
        let flipped: Vec<bool> = spins.iter().zip(&prev).map(|(a, b)| a != b).collect();
        let mut clusters = cluster_sizes(&graph, &flipped);
        clusters.sort_unstable_by(|a, b| b.cmp(a));
        steps.push(AvalancheStep { h, clusters });
        prev = spins.to_vec();
    }
    Ok(steps)
}

fn cluster_sizes(graph: &RegionGraph, marked: &[bool]) -> Vec<usize> {
    let mut seen = vec![false; marked.len()];
    let mut sizes = Vec::new();
    for start in 0..marked.len() {
        if !marked[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(u) = stack.pop() {
            size += 1;
            for &(v, _) in &graph.neighbors[u] {
                if marked[v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::sample_field;

    fn nn() -> CouplingSpec {
        CouplingSpec::nearest_neighbor(1.0).unwrap()
    }

    #[test]
    fn single_site_energy() {
        let r = Region::custom([Site::ORIGIN]);
        let field = FieldSample::from_values(r.clone(), vec![1.0]).unwrap();
        let params = DisorderParams::ground(0.0, 1.0).unwrap();
        let free = CouplingSpec::from_offsets([]).unwrap();
        let cfg = SpinConfig::uniform(r, Spin::Plus);
        let e = hamiltonian_energy(&cfg, &BoundaryCondition::PLUS, &free, &field, &params).unwrap();
        assert_eq!(e, -1.0);
    }

    #[test]
    fn all_plus_cross_energy() {
        let r = Region::ball(Site::ORIGIN, 1);
        let field = FieldSample::zeros(r.clone());
        let params = DisorderParams::ground(0.0, 1.0).unwrap();
        let cfg = SpinConfig::uniform(r, Spin::Plus);
        let e = hamiltonian_energy(&cfg, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        assert_eq!(e, -16.0);
    }

    #[test]
    fn flip_energy_identity() {
        let r = Region::ball(Site::ORIGIN, 2);
        let field = sample_field(&r, 5);
        let params = DisorderParams::ground(0.3, 1.2).unwrap();
        let bc = BoundaryCondition::PLUS;
        let p = Problem::new(&r, &bc, &nn(), &field, &params).unwrap();
        let b = p.local_fields(None);
        let spins: Vec<Spin> = (0..r.len()).map(|i| if i % 3 == 0 { Spin::Plus } else { Spin::Minus }).collect();
        let e0 = p.energy(&spins);
        for v in 0..r.len() {
            let mut f = spins.clone();
            f[v] = -f[v];
            let local: f64 = p.graph().neighbors[v].iter().map(|&(u, j)| j * spins[u].value()).sum::<f64>() + b[v];
            let predicted = 2.0 * spins[v].value() * local;
            assert!((p.energy(&f) - e0 - predicted).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_ising_convention() {
        let ell = 2;
        let field = FieldSample::zeros(Region::ball(Site::ORIGIN, 3 * ell));
        let params = DisorderParams::ground(0.0, 0.0).unwrap();
        let obs = scale_observables(ell, &field, &params, &nn()).unwrap();
        assert_eq!(obs.d, 13);
        assert_eq!(obs.g, 0.0);
        assert_eq!(obs.energies.pp, obs.energies.mm);
        assert_eq!(obs.energies.pm, obs.energies.mp);
        let full: f64 = Region::ball(Site::ORIGIN, 2 * ell).edge_boundary(&nn()).len() as f64;
        assert_eq!(obs.b, full);
    }

    #[test]
    fn forced_sites_follow_field() {
        let r = Region::ball(Site::ORIGIN, 4);
        let field = sample_field(&r, 77);
        let params = DisorderParams::ground(0.1, 3.0).unwrap();
        let gs = minimize(&r, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        for (i, &s) in r.sites().iter().enumerate() {
            let f = params.h + params.epsilon * field.value_at(s).unwrap();
            if f.abs() > 4.0 {
                assert_eq!(gs.config.spins()[i], Spin::from_sign(f));
            }
        }
    }

    #[test]
    fn rejects_antiferromagnet() {
        let r = Region::ball(Site::ORIGIN, 1);
        let af = CouplingSpec::from_offsets([(1, 0, -1.0), (-1, 0, -1.0)]).unwrap();
        let field = FieldSample::zeros(r.clone());
        let params = DisorderParams::ground(0.0, 1.0).unwrap();
        assert!(matches!(
            minimize(&r, &BoundaryCondition::PLUS, &af, &field, &params),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn mixed_needs_annulus() {
        let r = Region::ball(Site::ORIGIN, 2);
        let field = FieldSample::zeros(r.clone());
        let params = DisorderParams::ground(0.0, 1.0).unwrap();
        let bc = BoundaryCondition::Mixed { outer: Spin::Plus, inner: Spin::Minus };
        assert!(minimize(&r, &bc, &nn(), &field, &params).is_err());
    }

    #[test]
    fn text_grid_layout() {
        let cfg = SpinConfig::new(
            Region::ball(Site::ORIGIN, 1),
            vec![Spin::Plus, Spin::Minus, Spin::Plus, Spin::Minus, Spin::Plus],
        )
        .unwrap();
        assert_eq!(cfg.to_text_grid(), ".+.\n-+-\n.+.\n");
    }

    #[test]
    fn breakpoints_match_bisection() {
        let params = DisorderParams::ground(0.0, 1.0).unwrap();
        for seed in 0..20 {
            let field = sample_field(&Region::ball(Site::ORIGIN, 6), seed);
            let a = flip_thresholds(2, &field, &params, &nn(), ThresholdMethod::Breakpoint).unwrap();
            let b = flip_thresholds(2, &field, &params, &nn(), ThresholdMethod::Bisection { tol: 1e-9 }).unwrap();
            for (x, y) in a.plus.iter().chain(&a.minus).zip(b.plus.iter().chain(&b.minus)) {
                assert!((x - y).abs() < 1e-8, "seed {seed}: {x} vs {y}");
            }
            for (p, m) in a.plus.iter().zip(&a.minus) {
                assert!(p <= m);
            }
        }
    }

    #[test]
    fn avalanche_decoupled_limit() {
        let r = Region::ball(Site::ORIGIN, 2);
        let field = sample_field(&r, 3);
        let params = DisorderParams::ground(0.0, 1e4).unwrap();
        let grid: Vec<f64> = (0..=4000).map(|i| -4e4 + 20.0 * i as f64).collect();
        let steps = avalanche_scan(&r, &field, &nn(), &params, &grid).unwrap();
        let total: usize = steps.iter().flat_map(|s| s.clusters.iter()).sum();
        assert_eq!(total, r.len());
        assert!(steps.iter().all(|s| s.clusters.iter().all(|&c| c == 1)));
    }
}
