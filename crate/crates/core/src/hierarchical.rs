//! Hierarchical constructions: nested 3^n block partitions, large-field
//! events, the curdling spin assignment, Mandelbrot percolation, and the
//! high-disorder percolation checks.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::disorder::{keyed_uniform, normal_cdf, sample_field, DisorderParams, FieldSample, Stream};
use crate::error::{Error, Result};
use crate::estimators::{least_squares, par_replicas, replica_seed, LinearFit, MeanEstimate, Proportion};
use crate::groundstate::{minimize, BoundaryCondition, Spin, SpinConfig};
use crate::lattice::{CouplingSpec, Region, RegionKind, Site};

/// Site-percolation threshold of the square lattice (Newman and Ziff, 2000).
pub const SITE_PERCOLATION_THRESHOLD: f64 = 0.592_746;
pub const SITE_PERCOLATION_SOURCE: &str = "Newman & Ziff, Phys. Rev. Lett. 85, 4104 (2000)";

/// Partition of Z^2 into blocks `[a 3^n, (a+1) 3^n) x [b 3^n, (b+1) 3^n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub level: u32,
}

impl BlockPartition {
    pub fn new(level: u32) -> Self {
        BlockPartition { level }
    }

    pub fn side(&self) -> u32 {
        3u32.pow(self.level)
    }

    /// Block index `(a, b)` containing `site`.
    pub fn block_of(&self, site: Site) -> (i32, i32) {
        let s = self.side() as i32;
        (site.x.div_euclid(s), site.y.div_euclid(s))
    }

    pub fn block(&self, a: i32, b: i32) -> Region {
        let s = self.side();
        Region::square(Site::new(a * s as i32, b * s as i32), s)
    }

    /// Index of the enclosing level-`n+1` block.
    pub fn parent(&self, a: i32, b: i32) -> (i32, i32) {
        (a.div_euclid(3), b.div_euclid(3))
    }

    /// The nine level-`n-1` blocks; empty at level 0.
    pub fn children(&self, a: i32, b: i32) -> Vec<(i32, i32)> {
        if self.level == 0 {
            return Vec::new();
        }
        (0..3).flat_map(|dy| (0..3).map(move |dx| (3 * a + dx, 3 * b + dy))).collect()
    }
}

fn boundary_strength(block: &Region, coupling: &CouplingSpec) -> f64 {
    block.edge_boundary(coupling).iter().map(|(u, v)| coupling.strength(v.x - u.x, v.y - u.y)).sum()
}

/// `|sum_{x in D} (h + eps eta_x)| > sum_{d_e D} J`; at `h = 0` this is
/// `eps |eta(D)| > J |d_e D|`.
pub fn large_field_event(block: &Region, field: &FieldSample, params: &DisorderParams, coupling: &CouplingSpec) -> Result<bool> {
    params.validate()?;
    let eta = field.block_sum(block)?;
    let total = params.h * block.len() as f64 + params.epsilon * eta;
    Ok(total.abs() > boundary_strength(block, coupling))
}

/// `n(x)`, `k(x)` and the constructed configuration `tau` on a window.
#[derive(Clone, Debug, PartialEq)]
pub struct CurdlingState {
    pub window: Region,
    pub max_level: u32,
    /// First level with a large-field event; `max_level` when capped.
    pub n: Vec<u32>,
    /// Level at which `x` is enclosed, or `n(x)` when never enclosed.
    pub k: Vec<u32>,
    /// No large-field event up to `max_level`.
    pub capped: Vec<bool>,
    pub tau: SpinConfig,
    pub warnings: Vec<String>,
}

impl CurdlingState {
    /// Sites fixed by their own large-field event or an enclosing circuit,
    /// hence independent of the window boundary condition.
    pub fn is_interior_determined(&self, i: usize) -> bool {
        !self.capped[i] || self.k[i] < self.n[i]
    }

    /// Fraction of sites where `tau` equals `other`.
    pub fn agreement(&self, other: &SpinConfig) -> Result<f64> {
        if other.region() != &self.window {
            return Err(Error::domain("configuration is on a different region"));
        }
        let same = self.tau.spins().iter().zip(other.spins()).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.window.len() as f64)
    }

    /// Layered text grids: `n(x)` (capped shown as `*`), `k(x)` and `tau`.
    pub fn to_text(&self) -> String {
        let side = (self.window.len() as f64).sqrt().round() as usize;
        let digit = |v: u32| std::char::from_digit(v.min(35), 36).unwrap();
        let grid = |cell: &dyn Fn(usize) -> char| {
            let mut out = String::new();
            for row in (0..side).rev() {
                for col in 0..side {
                    out.push(cell(row * side + col));
                }
                out.push('\n');
            }
            out
        };
        format!(
            "n:\n{}\nk:\n{}\ntau:\n{}",
            grid(&|i| if self.capped[i] { '*' } else { digit(self.n[i]) }),
            grid(&|i| digit(self.k[i])),
            grid(&|i| self.tau.spins()[i].symbol())
        )
    }
}

fn window_geometry(window: &Region, max_level: u32) -> Result<(Site, usize)> {
    let side = 3u32
        .checked_pow(max_level)
        .filter(|&s| s <= 2187)
        .ok_or_else(|| Error::domain("max_level must be <= 7"))?;
    match window.kind() {
        RegionKind::Box { origin, width, height } if *width == side && *height == side => {
            if origin.x.rem_euclid(side as i32) != 0 || origin.y.rem_euclid(side as i32) != 0 {
                return Err(Error::domain("window must be a level-max_level block of the partition"));
            }
            Ok((*origin, side as usize))
        }
        _ => Err(Error::domain(format!("window must be a square of side 3^{max_level}"))),
    }
}

/// Region indices of the sites, given row-major box order (`y` then `x`).
fn box_index(side: usize, col: usize, row: usize) -> usize {
    row * side + col
}

/// 4-connected components of `open` cells in a `side x side` grid; returns
/// each cell's component id (or `usize::MAX`) and whether the component
/// touches the grid edge.
fn components(side: usize, open: &[bool]) -> (Vec<usize>, Vec<bool>) {
    let mut label = vec![usize::MAX; open.len()];
    let mut touches = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..open.len() {
        if !open[start] || label[start] != usize::MAX {
            continue;
        }
        let id = touches.len();
        let mut edge = false;
        label[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (col, row) = (i % side, i / side);
            if col == 0 || row == 0 || col + 1 == side || row + 1 == side {
                edge = true;
            }
            let mut visit = |j: usize| {
                if open[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if col > 0 {
                visit(i - 1);
            }
            if col + 1 < side {
                visit(i + 1);
            }
            if row > 0 {
                visit(i - side);
            }
            if row + 1 < side {
                visit(i + side);
            }
        }
        touches.push(edge);
    }
    (label, touches)
}

/// Curdling construction on a level-`max_level` block with boundary spin
/// `boundary` outside it.
///
/// A site is enclosed at level `k` when its 4-connected component among
/// sites with `n > k` misses the window edge, i.e. a *-connected circuit of
/// `n <= k` sites surrounds it.
pub fn curdle(
    window: &Region,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    max_level: u32,
    boundary: Spin,
) -> Result<CurdlingState> {
    params.validate()?;
    let j = coupling
        .nearest_neighbor_strength()
        .ok_or_else(|| Error::UnsupportedModel("curdling is defined for nearest-neighbour J".into()))?;
    let (origin, side) = window_geometry(window, max_level)?;
    field.require_covers(window)?;
    let len = side * side;
    let sites = window.sites();
    debug_assert!(sites.iter().enumerate().all(|(i, s)| {
        box_index(side, (s.x - origin.x) as usize, (s.y - origin.y) as usize) == i
    }));
    let local: Vec<f64> = sites.iter().map(|&s| params.h + params.epsilon * field.value_at(s).unwrap()).collect();

    // Block sums level by level; sums[n][block] with blocks row-major.
    let mut sums: Vec<Vec<f64>> = vec![local.clone()];
    let mut n_of = vec![u32::MAX; len];
    for level in 0..=max_level {
        let bs = 3usize.pow(level);
        let per_row = side / bs;
        if level > 0 {
            let prev = &sums[level as usize - 1];
            let prev_row = per_row * 3;
            let mut cur = vec![0.0; per_row * per_row];
            for (b, c) in cur.iter_mut().enumerate() {
                let (bx, by) = (b % per_row, b / per_row);
                for dy in 0..3 {
                    for dx in 0..3 {
                        *c += prev[(3 * by + dy) * prev_row + 3 * bx + dx];
                    }
                }
            }
            sums.push(cur);
        }
        let threshold = 4.0 * bs as f64 * j;
        let level_sums = &sums[level as usize];
        for (i, n) in n_of.iter_mut().enumerate() {
            if *n == u32::MAX {
                let (col, row) = (i % side, i / side);
                if level_sums[(row / bs) * per_row + col / bs].abs() > threshold {
                    *n = level;
                }
            }
        }
    }
    let capped: Vec<bool> = n_of.iter().map(|&n| n == u32::MAX).collect();
    let n: Vec<u32> = n_of.iter().map(|&v| v.min(max_level)).collect();

    let mut k = n.clone();
    let mut enclosing: Vec<Option<(u32, usize)>> = vec![None; len];
    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    for level in 0..max_level {
        let open: Vec<bool> = (0..len).map(|i| n[i] > level || capped[i]).collect();
        let (label, touches) = components(side, &open);
        let mut fresh: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..len {
            if open[i] && !touches[label[i]] && enclosing[i].is_none() && level < n[i] {
                fresh.entry(label[i]).or_default().push(i);
            }
        }
        for (_, members) in fresh {
            let g = groups.len();
            for &i in &members {
                k[i] = level;
                enclosing[i] = Some((level, g));
            }
            groups.push((level, members));
        }
    }

    let mut tau: Vec<Option<Spin>> = vec![None; len];
    let mut warnings = Vec::new();
    let capped_count = capped.iter().filter(|&&c| c).count();
    if capped_count * 100 > len {
        warnings.push(format!("{capped_count} of {len} sites reached max_level without a large-field event"));
    }
    let assign_signs = |tau: &mut Vec<Option<Spin>>, level: u32| {
        for i in 0..len {
            if tau[i].is_none() && enclosing[i].is_none() && !capped[i] && n[i] == level {
                let (col, row) = (i % side, i / side);
                let bs = 3usize.pow(level);
                let per_row = side / bs;
                tau[i] = Some(Spin::from_sign(sums[level as usize][(row / bs) * per_row + col / bs]));
            }
        }
    };
    let solve = |tau: &mut Vec<Option<Spin>>, members: &[usize]| -> Result<()> {
        let region = Region::custom(members.iter().map(|&i| sites[i]));
        let mut bc = BTreeMap::new();
        for s in region.vertex_boundary(coupling) {
            let spin = match window.index_of(s) {
                Some(i) => tau[i].ok_or_else(|| Error::Internal("boundary spin assigned out of order".into()))?,
                None => boundary,
            };
            bc.insert(s, spin);
        }
        let gs = minimize(&region, &BoundaryCondition::Explicit(bc), coupling, field, params)?;
        for (s, &spin) in region.sites().iter().zip(gs.config.spins()) {
            tau[window.index_of(*s).unwrap()] = Some(spin);
        }
        Ok(())
    };
    let mut next_group = 0;
    for level in 0..=max_level {
        assign_signs(&mut tau, level);
        while next_group < groups.len() && groups[next_group].0 == level {
            solve(&mut tau, &groups[next_group].1)?;
            next_group += 1;
        }
    }
    let rest: Vec<usize> = (0..len).filter(|&i| tau[i].is_none()).collect();
    if !rest.is_empty() {
        solve(&mut tau, &rest)?;
    }
    let tau = SpinConfig::new(window.clone(), tau.into_iter().map(Option::unwrap).collect())?;
    Ok(CurdlingState { window: window.clone(), max_level, n, k, capped, tau, warnings })
}

/// Aggregate statistics of independent Mandelbrot curdling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MandelbrotStats {
    pub p: f64,
    pub levels: u32,
    pub samples: usize,
    pub side: u32,
    /// Left-right crossing by a 4-connected surviving path.
    pub crossing: Proportion,
    pub area_fraction: MeanEstimate,
    pub expected_area: f64,
    /// `(r, P(centre connected to distance >= r))`.
    pub connectivity: Vec<(u32, Proportion)>,
}

/// Surviving cells of one Mandelbrot sample; a block is kept iff its
/// uniform is `>= p`, so samples are monotone in `p` under a fixed seed.
pub fn mandelbrot_sample(p: f64, levels: u32, seed: u64, sample: u64) -> Vec<bool> {
    let side = 3usize.pow(levels);
    let mut alive = vec![true; side * side];
    for level in 0..levels {
        let bs = 3usize.pow(levels - level - 1);
        let per_row = side / bs;
        for by in 0..per_row {
            for bx in 0..per_row {
                let corner = by * bs * side + bx * bs;
                if !alive[corner] {
                    continue;
                }
                let u = keyed_uniform(Stream::Mandelbrot, &[seed, sample, level as u64, bx as u64, by as u64]);
                if u < p {
                    for row in 0..bs {
                        let start = corner + row * side;
                        alive[start..start + bs].iter_mut().for_each(|a| *a = false);
                    }
                }
            }
        }
    }
    alive
}

fn crosses(side: usize, alive: &[bool]) -> bool {
    let (label, _) = components(side, alive);
    let mut left = vec![false; alive.len()];
    for row in 0..side {
        let i = row * side;
        if alive[i] {
            left[label[i]] = true;
        }
    }
    (0..side).any(|row| {
        let i = row * side + side - 1;
        alive[i] && left[label[i]]
    })
}

/// Largest L1 distance from `start` reached through `open` cells, or `None` if `start` is closed.
fn reach(side: usize, open: &[bool], start: usize) -> Option<u32> {
    if !open[start] {
        return None;
    }
    let (c0, r0) = ((start % side) as i64, (start / side) as i64);
    let mut seen = vec![false; open.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut best = 0;
    while let Some(i) = queue.pop_front() {
        let (col, row) = (i % side, i / side);
        best = best.max(((col as i64 - c0).abs() + (row as i64 - r0).abs()) as u32);
        let mut next = |jdx: usize| {
            if open[jdx] && !seen[jdx] {
                seen[jdx] = true;
                queue.push_back(jdx);
            }
        };
        if col > 0 {
            next(i - 1);
        }
        if col + 1 < side {
            next(i + 1);
        }
        if row > 0 {
            next(i - side);
        }
        if row + 1 < side {
            next(i + side);
        }
    }
    Some(best)
}

pub fn mandelbrot_percolation(p: f64, levels: u32, samples: usize, seed: u64) -> Result<MandelbrotStats> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
    }
    if levels > 7 {
        return Err(Error::domain("levels must be <= 7"));
    }
    if samples == 0 {
        return Err(Error::domain("at least one sample required"));
    }
    let side = 3usize.pow(levels);
    let centre = (side / 2) * side + side / 2;
    let radii: Vec<u32> = std::iter::successors(Some(1u32), |r| Some(r * 2)).take_while(|&r| r as usize <= side / 2).collect();
    let rows = par_replicas(samples, |s| {
        let alive = mandelbrot_sample(p, levels, seed, s);
        let area = alive.iter().filter(|&&a| a).count() as f64 / alive.len() as f64;
        Ok((crosses(side, &alive), area, reach(side, &alive, centre)))
    })?;
    let crossing = Proportion::new(rows.iter().filter(|r| r.0).count(), samples);
    let area_fraction = MeanEstimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let connectivity = radii
        .iter()
        .map(|&r| (r, Proportion::new(rows.iter().filter(|x| x.2.is_some_and(|d| d >= r)).count(), samples)))
        .collect();
    Ok(MandelbrotStats {
        p,
        levels,
        samples,
        side: side as u32,
        crossing,
        area_fraction,
        expected_area: (1.0 - p).powi(levels as i32),
        connectivity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighDisorderReport {
    /// `P(|h + eps eta| <= 4J)`.
    pub exceptional_prob: f64,
    pub threshold: f64,
    pub threshold_source: String,
    /// Exceptional sites sub-percolate, so `m(L)` decays exponentially.
    pub exponential_regime: bool,
}

pub fn high_disorder_check(params: &DisorderParams, coupling: &CouplingSpec) -> Result<HighDisorderReport> {
    params.validate()?;
    let j = coupling
        .nearest_neighbor_strength()
        .ok_or_else(|| Error::UnsupportedModel("high-disorder criterion is stated for nearest-neighbour J".into()))?;
    let (h, eps) = (params.h, params.epsilon);
    let exceptional_prob = if eps == 0.0 {
        if h.abs() <= 4.0 * j { 1.0 } else { 0.0 }
    } else {
        normal_cdf((4.0 * j - h) / eps) - normal_cdf((-4.0 * j - h) / eps)
    };
    Ok(HighDisorderReport {
        exceptional_prob,
        threshold: SITE_PERCOLATION_THRESHOLD,
        threshold_source: SITE_PERCOLATION_SOURCE.into(),
        exponential_regime: exceptional_prob < SITE_PERCOLATION_THRESHOLD,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSeries {
    pub radius: u32,
    pub replicas: usize,
    /// Fraction of open sites, pooled over replicas.
    pub open_fraction: MeanEstimate,
    pub open_prob_closed_form: f64,
    /// `(L, P(origin joined to the distance-L sphere through open sites))`.
    pub connectivity: Vec<(u32, Proportion)>,
    /// `log P` against `L` over the positive entries with `L >= 1`.
    pub fit: Option<LinearFit>,
    /// Closed sites whose plus-boundary ground-state spin differs from
    /// `sign(h + eps eta)`; `None` when not checked.
    pub forced_violations: Option<usize>,
}

/// Open sites `|h + eps eta| <= 4J` on `Lambda(radius)` and their
/// connectivity from the origin.
pub fn exceptional_percolation(
    radius: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    seed: u64,
    check_forced: bool,
) -> Result<ExceptionalSeries> {
    let report = high_disorder_check(params, coupling)?;
    let j = coupling.nearest_neighbor_strength().unwrap();
    if replicas == 0 {
        return Err(Error::domain("at least one replica required"));
    }
    let window = Region::ball(Site::ORIGIN, radius);
    let origin = window.index_of(Site::ORIGIN).unwrap();
    let rows = par_replicas(replicas, |r| {
        let field = sample_field(&window, replica_seed(seed, r));
        let local: Vec<f64> = field.values().iter().map(|e| params.h + params.epsilon * e).collect();
        let open: Vec<bool> = local.iter().map(|b| b.abs() <= 4.0 * j).collect();
        let reached = ball_reach(&window, &open, origin);
        let violations = if check_forced {
            let gs = minimize(&window, &BoundaryCondition::PLUS, coupling, &field, params)?;
            gs.config
                .spins()
                .iter()
                .zip(&local)
                .zip(&open)
                .filter(|((s, b), o)| !**o && **s != Spin::from_sign(**b))
                .count()
        } else {
            0
        };
        Ok((open.iter().filter(|&&o| o).count() as f64 / open.len() as f64, reached, violations))
    })?;
    let open_fraction = MeanEstimate::from_samples(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let connectivity: Vec<(u32, Proportion)> = (0..=radius)
        .map(|l| (l, Proportion::new(rows.iter().filter(|x| x.1.is_some_and(|d| d >= l)).count(), replicas)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        connectivity.iter().filter(|(l, c)| *l >= 1 && c.p > 0.0).map(|(l, c)| (*l as f64, c.p.ln())).unzip();
    let fit = (xs.len() >= 3).then(|| least_squares(&xs, &ys));
    Ok(ExceptionalSeries {
        radius,
        replicas,
        open_fraction,
        open_prob_closed_form: report.exceptional_prob,
        connectivity,
        fit,
        forced_violations: check_forced.then(|| rows.iter().map(|r| r.2).sum()),
    })
}

fn ball_reach(window: &Region, open: &[bool], start: usize) -> Option<u32> {
    if !open[start] {
        return None;
    }
    let sites = window.sites();
    let mut seen = vec![false; sites.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut best = 0;
    while let Some(i) = queue.pop_front() {
        best = best.max(sites[i].distance(Site::ORIGIN));
        for nb in sites[i].unit_neighbors() {
            if let Some(jdx) = window.index_of(nb) {
                if open[jdx] && !seen[jdx] {
                    seen[jdx] = true;
                    queue.push_back(jdx);
                }
            }
        }
    }
    Some(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDensityReport {
    pub ell: u32,
    pub block_side: u32,
    pub replicas: usize,
    /// Probability that the block holds a site sensitive at distance `ell`.
    pub block_prob: Proportion,
    /// `m(ell)` from the per-site sensitivity indicators of each block.
    pub m_hat: MeanEstimate,
    /// `(2 ell)^2 m(ell)`.
    pub site_union_bound: f64,
    /// `|d_v Lambda(ell)| m(ell)`.
    pub boundary_union_bound: f64,
    /// `ell^{d-1} m(ell)`, the smallest `c_0` compatible with the data.
    pub implied_c0: f64,
}

/// Sensitivity `sigma_v^{Lambda_v(ell),+} != sigma_v^{Lambda_v(ell),-}` over the block `[0, 2 ell)^2`.
pub fn block_density(
    ell: u32,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    replicas: usize,
    seed: u64,
) -> Result<BlockDensityReport> {
    params.validate()?;
    if params.temperature != 0.0 {
        return Err(Error::domain("block_density is a zero-temperature estimator"));
    }
    if ell == 0 || replicas < 2 {
        return Err(Error::domain("need ell >= 1 and at least 2 replicas"));
    }
    let side = 2 * ell;
    let block = Region::square(Site::ORIGIN, side);
    let cover = Region::square(Site::new(-(ell as i32), -(ell as i32)), side + 2 * ell);
    let rows = par_replicas(replicas, |r| {
        let field = sample_field(&cover, replica_seed(seed, r));
        let mut hits = 0usize;
        for &v in block.sites() {
            let ball = Region::ball(v, ell);
            let plus = minimize(&ball, &BoundaryCondition::PLUS, coupling, &field, params)?;
            let minus = minimize(&ball, &BoundaryCondition::MINUS, coupling, &field, params)?;
            if plus.config.spin_at(v) != minus.config.spin_at(v) {
                hits += 1;
            }
        }
        Ok(hits)
    })?;
    let block_prob = Proportion::new(rows.iter().filter(|&&h| h > 0).count(), replicas);
    let m_hat = MeanEstimate::from_samples(&rows.iter().map(|&h| h as f64 / block.len() as f64).collect::<Vec<_>>());
    let boundary = Region::ball(Site::ORIGIN, ell).vertex_boundary(coupling).len() as f64;
    Ok(BlockDensityReport {
        ell,
        block_side: side,
        replicas,
        block_prob,
        m_hat,
        site_union_bound: (side * side) as f64 * m_hat.mean,
        boundary_union_bound: boundary * m_hat.mean,
        implied_c0: ell as f64 * m_hat.mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::chi;

    fn nn() -> CouplingSpec {
        CouplingSpec::nearest_neighbor(1.0).unwrap()
    }

    #[test]
    fn partition_nests_nine_to_one() {
        let fine = BlockPartition::new(1);
        let coarse = BlockPartition::new(2);
        for (a, b) in [(0, 0), (-1, 2), (4, -5)] {
            let kids = coarse.children(a, b);
            assert_eq!(kids.len(), 9);
            let mut union: Vec<Site> = kids.iter().flat_map(|&(c, d)| fine.block(c, d).sites().to_vec()).collect();
            union.sort();
            assert_eq!(union, coarse.block(a, b).sites());
            assert!(kids.iter().all(|&(c, d)| fine.parent(c, d) == (a, b)));
        }
        assert_eq!(fine.block_of(Site::new(-1, 3)), (-1, 1));
    }

    #[test]
    fn zero_field_has_no_large_field() {
        let block = BlockPartition::new(1).block(0, 0);
        let p = DisorderParams::ground(0.0, 1.0).unwrap();
        assert!(!large_field_event(&block, &FieldSample::zeros(block.clone()), &p, &nn()).unwrap());
        let partial = FieldSample::zeros(BlockPartition::new(0).block(0, 0));
        assert!(large_field_event(&block, &partial, &p, &nn()).is_err());
    }

    #[test]
    fn strong_disorder_forces_every_site() {
        let window = BlockPartition::new(2).block(0, 0);
        let field = sample_field(&window, 5);
        let p = DisorderParams::ground(0.0, 1e6).unwrap();
        let st = curdle(&window, &field, &p, &nn(), 2, Spin::Plus).unwrap();
        assert!(st.n.iter().all(|&n| n == 0));
        for (i, s) in window.sites().iter().enumerate() {
            assert_eq!(st.tau.spins()[i], Spin::from_sign(field.value_at(*s).unwrap()));
        }
    }

    #[test]
    fn enclosing_ring_screens_the_boundary() {
        let window = BlockPartition::new(2).block(0, 0);
        let values: Vec<f64> = window
            .sites()
            .iter()
            .map(|s| if s.x == 0 || s.y == 0 || s.x == 8 || s.y == 8 { 10.0 } else { 0.01 * ((s.x * 7 + s.y * 3) % 5 - 2) as f64 })
            .collect();
        let field = FieldSample::from_values(window.clone(), values).unwrap();
        let p = DisorderParams::ground(0.0, 1.0).unwrap();
        let plus = curdle(&window, &field, &p, &nn(), 2, Spin::Plus).unwrap();
        let minus = curdle(&window, &field, &p, &nn(), 2, Spin::Minus).unwrap();
        assert_eq!(plus.tau, minus.tau);
        assert!(plus.text_has_layers());
    }

    impl CurdlingState {
        fn text_has_layers(&self) -> bool {
            let t = self.to_text();
            t.starts_with("n:\n") && t.contains("\nk:\n") && t.contains("\ntau:\n")
        }
    }

    #[test]
    fn mandelbrot_extremes() {
        let all = mandelbrot_percolation(0.0, 3, 20, 1).unwrap();
        assert_eq!(all.crossing.p, 1.0);
        assert_eq!(all.area_fraction.mean, 1.0);
        let none = mandelbrot_percolation(1.0, 3, 20, 1).unwrap();
        assert_eq!(none.crossing.p, 0.0);
        assert_eq!(none.area_fraction.mean, 0.0);
        assert!(mandelbrot_percolation(0.5, 8, 1, 1).is_err());
    }

    #[test]
    fn mandelbrot_crossing_monotone_in_p() {
        let mut last = 1.0;
        for p in [0.0, 0.05, 0.1, 0.2, 0.3, 0.5] {
            let s = mandelbrot_percolation(p, 3, 200, 9).unwrap();
            assert!(s.crossing.p <= last);
            last = s.crossing.p;
        }
    }

    #[test]
    fn high_disorder_limits() {
        let c = nn();
        let big = high_disorder_check(&DisorderParams::ground(0.0, 1e6).unwrap(), &c).unwrap();
        assert!(big.exceptional_prob < 1e-5 && big.exponential_regime);
        let small = high_disorder_check(&DisorderParams::ground(0.0, 1e-3).unwrap(), &c).unwrap();
        assert!(small.exceptional_prob > 1.0 - 1e-12 && !small.exponential_regime);
        for eps in [0.5, 2.0, 7.0] {
            let r = high_disorder_check(&DisorderParams::ground(0.0, eps).unwrap(), &c).unwrap();
            assert!((r.exceptional_prob - (1.0 - chi(4.0 / eps))).abs() < 1e-12);
        }
    }

    #[test]
    fn no_open_sites_no_connection() {
        let p = DisorderParams::ground(100.0, 0.0).unwrap();
        let s = exceptional_percolation(4, &p, &nn(), 10, 3, true).unwrap();
        assert!(s.connectivity.iter().all(|(_, c)| c.p == 0.0));
        assert_eq!(s.forced_violations, Some(0));
    }

    #[test]
    fn huge_disorder_blocks_are_insensitive() {
        let r = block_density(2, &DisorderParams::ground(0.0, 1e6).unwrap(), &nn(), 20, 4).unwrap();
        assert_eq!(r.block_prob.p, 0.0);
    }
}
