//! Positive temperature: exact enumeration for small systems, a
//! core/shell conditioned ensemble for `Lambda(3)`, and coupled heat-bath
//! chains for larger regions.

use serde::{Deserialize, Serialize};

use crate::disorder::{keyed_uniform, DisorderParams, FieldSample, Stream};
use crate::error::{Error, Result};
use crate::groundstate::{forcing_bound, BoundaryCondition, Problem, Spin};
use crate::lattice::{CouplingSpec, Region, Site};

/// Largest number of free sites enumerated exhaustively.
pub const ENUMERATION_BUDGET: usize = 22;

const RESYNC_MASK: u64 = (1 << 12) - 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ExactGibbsResult {
    pub log_partition: f64,
    /// `<sigma_v>` per region site; clamped sites carry their clamped value.
    pub magnetization: Vec<f64>,
}

fn require_positive_temperature(params: &DisorderParams) -> Result<()> {
    if params.temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition(
            "temperature must be > 0; use the ground-state solver at T = 0".into(),
        ))
    }
}

/// Running reference energy for overflow-free weight sums.
struct Weights {
    beta: f64,
    e_ref: f64,
}

impl Weights {
    /// Weight of energy `e`, and the factor previously accumulated sums
    /// must be multiplied by when the reference moves down.
    fn weight(&mut self, e: f64) -> (f64, Option<f64>) {
        if e < self.e_ref {
            let scale = (-self.beta * (self.e_ref - e)).exp();
            self.e_ref = e;
            (1.0, Some(scale))
        } else {
            ((-self.beta * (e - self.e_ref)).exp(), None)
        }
    }
}

/// Visits all configurations of the unclamped sites in Gray-code order.
/// The callback sees the spins, the energy and the free slot just flipped.
fn gray_walk<F>(problem: &Problem, b: &[f64], clamp: &[Option<Spin>], mut visit: F) -> Result<()>
where
    F: FnMut(&[f64], f64, Option<usize>),
{
    let n = problem.len();
    let free: Vec<usize> = (0..n).filter(|&i| clamp[i].is_none()).collect();
    if free.len() > ENUMERATION_BUDGET {
        return Err(Error::Budget { sites: free.len(), budget: ENUMERATION_BUDGET });
    }
    let nb = &problem.graph().neighbors;
    let mut spins: Vec<f64> = clamp.iter().map(|c| c.map_or(-1.0, Spin::value)).collect();
    let exact = |spins: &[f64]| -> (f64, Vec<f64>) {
        let loc: Vec<f64> = (0..n)
            .map(|i| b[i] + nb[i].iter().map(|&(j, w)| w * spins[j]).sum::<f64>())
            .collect();
        // H = -1/2 sum_i s_i (loc_i - b_i) - sum_i b_i s_i
        let e = -(0..n).map(|i| spins[i] * (0.5 * (loc[i] - b[i]) + b[i])).sum::<f64>();
        (e, loc)
    };
    let (mut e, mut loc) = exact(&spins);
    visit(&spins, e, None);
    for g in 1u64..(1u64 << free.len()) {
        let slot = g.trailing_zeros() as usize;
        let i = free[slot];
        e += 2.0 * spins[i] * loc[i];
        spins[i] = -spins[i];
        let delta = 2.0 * spins[i];
        for &(u, w) in &nb[i] {
            loc[u] += w * delta;
        }
        if g & RESYNC_MASK == 0 {
            (e, loc) = exact(&spins);
        }
        visit(&spins, e, Some(slot));
    }
    Ok(())
}

fn enumerate(
    problem: &Problem,
    b: &[f64],
    clamp: &[Option<Spin>],
    temperature: f64,
    with_magnetization: bool,
) -> Result<ExactGibbsResult> {
    let n = if with_magnetization { problem.len() } else { 0 };
    let mut weights = Weights { beta: 1.0 / temperature, e_ref: f64::INFINITY };
    let mut z = 0.0;
    let mut plus = vec![0.0; n];
    gray_walk(problem, b, clamp, |spins, e, _| {
        if weights.e_ref.is_infinite() {
            weights.e_ref = e;
        }
        let (w, scale) = weights.weight(e);
        if let Some(s) = scale {
            z *= s;
            plus.iter_mut().for_each(|p| *p *= s);
        }
        z += w;
        for (p, &s) in plus.iter_mut().zip(spins) {
            if s > 0.0 {
                *p += w;
            }
        }
    })?;
    Ok(ExactGibbsResult {
        log_partition: z.ln() - weights.beta * weights.e_ref,
        magnetization: plus.iter().map(|p| 2.0 * p / z - 1.0).collect(),
    })
}

/// `log Z` only.
fn log_partition(problem: &Problem, clamp: &[Option<Spin>], temperature: f64) -> Result<f64> {
    Ok(enumerate(problem, &problem.local_fields(None), clamp, temperature, false)?.log_partition)
}

/// Exact `log Z^{Lambda,tau}` and `<sigma_v>^{Lambda,tau}`.
pub fn exact_gibbs(
    region: &Region,
    bc: &BoundaryCondition,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
) -> Result<ExactGibbsResult> {
    require_positive_temperature(params)?;
    let problem = Problem::new(region, bc, coupling, field, params)?;
    exact_for(&problem, &vec![None; region.len()], params.temperature)
}

/// Enumeration with some sites held fixed.
pub fn exact_gibbs_clamped(
    region: &Region,
    bc: &BoundaryCondition,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
    clamp: &[Option<Spin>],
) -> Result<ExactGibbsResult> {
    require_positive_temperature(params)?;
    if clamp.len() != region.len() {
        return Err(Error::domain("clamp mask must have one entry per site"));
    }
    let problem = Problem::new(region, bc, coupling, field, params)?;
    exact_for(&problem, clamp, params.temperature)
}

fn exact_for(problem: &Problem, clamp: &[Option<Spin>], temperature: f64) -> Result<ExactGibbsResult> {
    enumerate(problem, &problem.local_fields(None), clamp, temperature, true)
}

/// Exact Gibbs state of a region whose shell (sites outside a core) is
/// enumerated once and summarised by its interface pattern.
///
/// `Z(t) = sum_c exp(-H_core(c; t)/T) * A(c)`, where
/// `A(c) = sum_shell exp(-(H_shell + H_interface(c))/T)`; the shift `t`
/// acts on the core only, so each evaluation costs `2^|core|` terms.
#[derive(Clone, Debug)]
pub struct ConditionedEnsemble {
    core: Vec<usize>,
    core_pairs: Vec<(usize, usize, f64)>,
    core_field: Vec<f64>,
    log_shell: Vec<f64>,
    beta: f64,
}

const MAX_CORE: usize = 16;
const MAX_INTERFACE: usize = 20;

impl ConditionedEnsemble {
    pub fn new(problem: &Problem, core_mask: &[bool], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Precondition("conditioned ensemble needs T > 0".into()));
        }
        let n = problem.len();
        let core: Vec<usize> = (0..n).filter(|&i| core_mask[i]).collect();
        if core.len() > MAX_CORE {
            return Err(Error::Budget { sites: core.len(), budget: MAX_CORE });
        }
        let mut slot = vec![usize::MAX; n];
        for (k, &i) in core.iter().enumerate() {
            slot[i] = k;
        }
        let nb = &problem.graph().neighbors;
        let interface: Vec<usize> = (0..n)
            .filter(|&i| !core_mask[i] && nb[i].iter().any(|&(j, _)| core_mask[j]))
            .collect();
        if interface.len() > MAX_INTERFACE {
            return Err(Error::Budget { sites: interface.len(), budget: MAX_INTERFACE });
        }
        let mut bit = vec![usize::MAX; n];
        for (q, &i) in interface.iter().enumerate() {
            bit[i] = q;
        }
        let b = problem.local_fields(None);
        let beta = 1.0 / temperature;

        // Shell weights: the core is clamped and its contributions are cancelled below.
        let mut shell_b = b.clone();
        let mut clamp = vec![None; n];
        for &i in &core {
            shell_b[i] = 0.0;
            clamp[i] = Some(Spin::Plus);
        }
        let shell_problem = ShellView { problem, core_mask };
        let bins = shell_problem.bin_weights(&shell_b, &clamp, &bit, interface.len(), beta)?;

        let mut cross = Vec::new();
        for &i in &core {
            for &(j, w) in &nb[i] {
                if !core_mask[j] {
                    cross.push((slot[i], bit[j], w));
                }
            }
        }
        let mut log_shell = Vec::with_capacity(1 << core.len());
        for c in 0u32..(1 << core.len()) {
            let cs = |k: usize| if c >> k & 1 == 1 { 1.0 } else { -1.0 };
            let terms: Vec<f64> = bins
                .log_weights
                .iter()
                .enumerate()
                .filter(|(_, lw)| lw.is_finite())
                .map(|(p, lw)| {
                    let ps = |q: usize| if p >> q & 1 == 1 { 1.0 } else { -1.0 };
                    lw + beta * cross.iter().map(|&(k, q, w)| w * cs(k) * ps(q)).sum::<f64>()
                })
                .collect();
            log_shell.push(log_sum_exp(&terms));
        }
        let core_pairs = problem
            .graph()
            .internal_edges()
            .filter(|&(i, j, _)| core_mask[i] && core_mask[j])
            .map(|(i, j, w)| (slot[i], slot[j], w))
            .collect();
        let core_field = core.iter().map(|&i| b[i]).collect();
        Ok(ConditionedEnsemble { core, core_pairs, core_field, log_shell, beta })
    }

    /// Problem indices of the core sites.
    pub fn core(&self) -> &[usize] {
        &self.core
    }

    /// `log Z` and core magnetizations with `delta` added to every core local field.
    pub fn evaluate(&self, delta: f64) -> (f64, Vec<f64>) {
        let k = self.core.len();
        let logs: Vec<f64> = (0u32..(1 << k))
            .map(|c| {
                let cs = |s: usize| if c >> s & 1 == 1 { 1.0 } else { -1.0 };
                let pair: f64 = self.core_pairs.iter().map(|&(a, b, w)| w * cs(a) * cs(b)).sum();
                let lin: f64 = (0..k).map(|s| (self.core_field[s] + delta) * cs(s)).sum();
                self.beta * (pair + lin) + self.log_shell[c as usize]
            })
            .collect();
        let log_z = log_sum_exp(&logs);
        let mut mag = vec![0.0; k];
        for (c, lw) in logs.iter().enumerate() {
            let p = (lw - log_z).exp();
            for (s, m) in mag.iter_mut().enumerate() {
                *m += if c >> s & 1 == 1 { p } else { -p };
            }
        }
        (log_z, mag)
    }
}

struct ShellView<'a> {
    problem: &'a Problem,
    core_mask: &'a [bool],
}

struct Bins {
    log_weights: Vec<f64>,
}

impl ShellView<'_> {
    fn bin_weights(&self, b: &[f64], clamp: &[Option<Spin>], bit: &[usize], width: usize, beta: f64) -> Result<Bins> {
        // The clamped core still couples to the shell in the walk; remove that
        // by enumerating over a problem whose core-shell bonds are cancelled
        // through an opposing field on the shell.
        let nb = &self.problem.graph().neighbors;
        let mut shell_b = b.to_vec();
        for i in 0..shell_b.len() {
            if !self.core_mask[i] {
                shell_b[i] -= nb[i].iter().filter(|&&(j, _)| self.core_mask[j]).map(|&(_, w)| w).sum::<f64>();
            }
        }
        // Core-core bonds and the core field are constant under the clamp; subtract their energy.
        let core_const: f64 = -self
            .problem
            .graph()
            .internal_edges()
            .filter(|&(i, j, _)| self.core_mask[i] && self.core_mask[j])
            .map(|(_, _, w)| w)
            .sum::<f64>();
        let mut weights = Weights { beta, e_ref: f64::INFINITY };
        let mut acc = vec![0.0; 1 << width];
        let mut pattern = 0usize;
        let mut first = true;
        let free_slots: Vec<usize> = (0..clamp.len()).filter(|&i| clamp[i].is_none()).collect();
        gray_walk(self.problem, &shell_b, clamp, |_, e, flipped| {
            let e = e - core_const;
            if let Some(slot) = flipped {
                let i = free_slots[slot];
                if bit[i] != usize::MAX {
                    pattern ^= 1 << bit[i];
                }
            }
            if first {
                weights.e_ref = e;
                first = false;
            }
            let (w, scale) = weights.weight(e);
            if let Some(s) = scale {
                acc.iter_mut().for_each(|a| *a *= s);
            }
            acc[pattern] += w;
        })?;
        let offset = -beta * weights.e_ref;
        Ok(Bins { log_weights: acc.iter().map(|&a| if a > 0.0 { a.ln() + offset } else { f64::NEG_INFINITY }).collect() })
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `T [log Z^{++} + log Z^{--} - log Z^{+-} - log Z^{-+}]` on the annulus.
pub fn surface_tension_post_exact(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<f64> {
    require_positive_temperature(params)?;
    let annulus = Region::annulus(ell)?;
    let free = vec![None; annulus.len()];
    let log_z = |outer, inner| -> Result<f64> {
        let bc = BoundaryCondition::Mixed { outer, inner };
        log_partition(&Problem::new(&annulus, &bc, coupling, field, params)?, &free, params.temperature)
    };
    let (p, m) = (Spin::Plus, Spin::Minus);
    Ok(params.temperature * (log_z(p, p)? + log_z(m, m)? - log_z(p, m)? - log_z(m, p)?))
}

/// Both sides of `Z^{++}_tau Z^{--}_tau = Z^{+-}_tau Z^{-+}_tau` in log form,
/// with `tau` clamped on `d_v Lambda(2 ell)` inside the annulus.
pub fn cross_ratio_check(
    ell: u32,
    tau: &[Spin],
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
) -> Result<(f64, f64)> {
    require_positive_temperature(params)?;
    let annulus = Region::annulus(ell)?;
    let layer = Region::ball(Site::ORIGIN, 2 * ell).vertex_boundary(coupling);
    if tau.len() != layer.len() {
        return Err(Error::domain(format!("tau has {} spins for {} layer sites", tau.len(), layer.len())));
    }
    let mut clamp = vec![None; annulus.len()];
    for (s, &t) in layer.iter().zip(tau) {
        let i = annulus
            .index_of(*s)
            .ok_or_else(|| Error::domain("separating layer leaves the annulus"))?;
        clamp[i] = Some(t);
    }
    let log_z = |outer, inner| -> Result<f64> {
        let bc = BoundaryCondition::Mixed { outer, inner };
        log_partition(&Problem::new(&annulus, &bc, coupling, field, params)?, &clamp, params.temperature)
    };
    let (p, m) = (Spin::Plus, Spin::Minus);
    Ok((log_z(p, p)? + log_z(m, m)?, log_z(p, m)? + log_z(m, p)?))
}

/// Sites of `d_v Lambda(2 ell)`, the order expected by `cross_ratio_check`.
pub fn separating_layer(ell: u32, coupling: &CouplingSpec) -> Vec<Site> {
    Region::ball(Site::ORIGIN, 2 * ell).vertex_boundary(coupling)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "sweeps", rename_all = "snake_case")]
pub enum BurnIn {
    Fixed(usize),
    /// Until the coupled chains' disagreement count stops falling over
    /// 100-sweep windows, at most `10 |region|` sweeps.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatBathSettings {
    /// Total sweeps including burn-in.
    pub sweeps: usize,
    pub burn_in: BurnIn,
    pub seed: u64,
}

const BATCHES: usize = 20;
const PLATEAU_WINDOW: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct MagnetizationField {
    pub estimates: Vec<f64>,
    /// Batch-means standard errors over 20 batches.
    pub std_error: Vec<f64>,
    pub sweeps: usize,
    pub burn_in: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledChains {
    pub plus: MagnetizationField,
    pub minus: MagnetizationField,
    /// Sweeps at which some site had plus < minus; zero for a monotone coupling.
    pub domination_violations: usize,
}

struct Chain<'a> {
    problem: &'a Problem,
    b: Vec<f64>,
    spins: Vec<f64>,
}

impl Chain<'_> {
    fn sweep(&mut self, seed: u64, sweep: u64, sites: &[Site], beta: f64) {
        let nb = &self.problem.graph().neighbors;
        for (i, s) in sites.iter().enumerate() {
            let local = self.b[i] + nb[i].iter().map(|&(j, w)| w * self.spins[j]).sum::<f64>();
            let u = keyed_uniform(Stream::HeatBath, &[seed, sweep, s.x as i64 as u64, s.y as i64 as u64]);
            let p_plus = 1.0 / (1.0 + (-2.0 * beta * local).exp());
            self.spins[i] = if u < p_plus { 1.0 } else { -1.0 };
        }
    }
}

struct BatchMeans {
    per_batch: usize,
    sums: Vec<Vec<f64>>,
}

impl BatchMeans {
    fn new(width: usize, measured: usize) -> Self {
        BatchMeans { per_batch: measured / BATCHES, sums: vec![vec![0.0; BATCHES]; width] }
    }

    fn add(&mut self, k: usize, values: impl Iterator<Item = f64>) {
        let batch = k / self.per_batch;
        if batch >= BATCHES {
            return;
        }
        for (row, v) in self.sums.iter_mut().zip(values) {
            row[batch] += v;
        }
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.per_batch as f64;
        let nb = BATCHES as f64;
        self.sums
            .iter()
            .map(|row| {
                let means: Vec<f64> = row.iter().map(|s| s / m).collect();
                let mean = means.iter().sum::<f64>() / nb;
                let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
                (mean, (var / nb).sqrt())
            })
            .unzip()
    }
}

/// Two heat-bath chains under `+` and `-` boundary conditions sharing the
/// uniforms keyed by `(seed, sweep, site)`.
pub fn coupled_heat_bath(
    region: &Region,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
    settings: &HeatBathSettings,
) -> Result<CoupledChains> {
    require_positive_temperature(params)?;
    coupling.require_ferromagnetic()?;
    let plus_problem = Problem::new(region, &BoundaryCondition::PLUS, coupling, field, params)?;
    let minus_problem = Problem::new(region, &BoundaryCondition::MINUS, coupling, field, params)?;
    let beta = 1.0 / params.temperature;
    let sites = region.sites();
    let n = sites.len();
    let mut plus = Chain { problem: &plus_problem, b: plus_problem.local_fields(None), spins: vec![1.0; n] };
    let mut minus = Chain { problem: &minus_problem, b: minus_problem.local_fields(None), spins: vec![-1.0; n] };
    let mut violations = 0;
    let mut sweep = 0u64;
    let step = |plus: &mut Chain, minus: &mut Chain, sweep: u64| -> bool {
        plus.sweep(settings.seed, sweep, sites, beta);
        minus.sweep(settings.seed, sweep, sites, beta);
        plus.spins.iter().zip(&minus.spins).any(|(a, b)| a < b)
    };
    let burn_in = match settings.burn_in {
        BurnIn::Fixed(k) => {
            for _ in 0..k {
                violations += step(&mut plus, &mut minus, sweep) as usize;
                sweep += 1;
            }
            k
        }
        BurnIn::Auto => {
            let cap = 10 * n.max(1);
            let mut previous = f64::INFINITY;
            loop {
                let mut window = 0.0;
                for _ in 0..PLATEAU_WINDOW {
                    violations += step(&mut plus, &mut minus, sweep) as usize;
                    sweep += 1;
                    window += plus.spins.iter().zip(&minus.spins).filter(|(a, b)| a != b).count() as f64;
                }
                let mean = window / PLATEAU_WINDOW as f64;
                if mean >= previous || sweep as usize >= cap {
                    break;
                }
                previous = mean;
            }
            sweep as usize
        }
    };
    if settings.sweeps < burn_in + BATCHES {
        return Err(Error::Precondition(format!(
            "{} sweeps leave fewer than {BATCHES} measurement sweeps after burn-in {burn_in}",
            settings.sweeps
        )));
    }
    let measured = settings.sweeps - burn_in;
    let mut plus_acc = BatchMeans::new(n, measured);
    let mut minus_acc = BatchMeans::new(n, measured);
    for k in 0..measured {
        violations += step(&mut plus, &mut minus, sweep) as usize;
        sweep += 1;
        plus_acc.add(k, plus.spins.iter().copied());
        minus_acc.add(k, minus.spins.iter().copied());
    }
    let field_of = |acc: &BatchMeans| {
        let (estimates, std_error) = acc.finish();
        MagnetizationField { estimates, std_error, sweeps: settings.sweeps, burn_in }
    };
    Ok(CoupledChains { plus: field_of(&plus_acc), minus: field_of(&minus_acc), domination_violations: violations })
}

/// One heat-bath chain started from `start` spins, tracking site means and
/// the products `sigma_i sigma_j` of the given index pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainEstimates {
    pub magnetization: MagnetizationField,
    pub pair_means: Vec<f64>,
    pub pair_std_error: Vec<f64>,
}

pub fn heat_bath_chain(
    region: &Region,
    bc: &BoundaryCondition,
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
    pairs: &[(usize, usize)],
) -> Result<ChainEstimates> {
    require_positive_temperature(params)?;
    coupling.require_ferromagnetic()?;
    if sweeps < burn_in + BATCHES {
        return Err(Error::Precondition(format!("need at least {BATCHES} sweeps after burn-in")));
    }
    let problem = Problem::new(region, bc, coupling, field, params)?;
    let beta = 1.0 / params.temperature;
    let sites = region.sites();
    let n = sites.len();
    if pairs.iter().any(|&(i, j)| i >= n || j >= n) {
        return Err(Error::domain("pair index outside the region"));
    }
    let mut chain = Chain { problem: &problem, b: problem.local_fields(None), spins: vec![1.0; n] };
    for s in 0..burn_in {
        chain.sweep(seed, s as u64, sites, beta);
    }
    let measured = sweeps - burn_in;
    let mut acc = BatchMeans::new(n, measured);
    let mut pair_acc = BatchMeans::new(pairs.len(), measured);
    for k in 0..measured {
        chain.sweep(seed, (burn_in + k) as u64, sites, beta);
        acc.add(k, chain.spins.iter().copied());
        pair_acc.add(k, pairs.iter().map(|&(i, j)| chain.spins[i] * chain.spins[j]));
    }
    let (estimates, std_error) = acc.finish();
    let (pair_means, pair_std_error) = pair_acc.finish();
    Ok(ChainEstimates {
        magnetization: MagnetizationField { estimates, std_error, sweeps, burn_in },
        pair_means,
        pair_std_error,
    })
}

/// How positive-temperature expectations are computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Engine {
    Exact,
    Mcmc(HeatBathSettings),
}

/// A positive-temperature observable with its Monte Carlo error (zero when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0 }
    }
}

/// `<sigma_v>^{region,+}` and `<sigma_v>^{region,-}` on `sites`, exactly.
///
/// Regions within the enumeration budget are enumerated directly; larger
/// ones go through a conditioned ensemble whose core is `sites`.
pub fn exact_magnetization_pair(
    region: &Region,
    sites: &[Site],
    coupling: &CouplingSpec,
    field: &FieldSample,
    params: &DisorderParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    require_positive_temperature(params)?;
    let idx: Vec<usize> = sites
        .iter()
        .map(|&s| region.index_of(s).ok_or_else(|| Error::domain("site outside region")))
        .collect::<Result<_>>()?;
    let run = |bc: &BoundaryCondition| -> Result<Vec<f64>> {
        let problem = Problem::new(region, bc, coupling, field, params)?;
        if region.len() <= ENUMERATION_BUDGET {
            let r = exact_for(&problem, &vec![None; region.len()], params.temperature)?;
            return Ok(idx.iter().map(|&i| r.magnetization[i]).collect());
        }
        let mask: Vec<bool> = (0..region.len()).map(|i| idx.contains(&i)).collect();
        let ens = ConditionedEnsemble::new(&problem, &mask, params.temperature)?;
        let (_, mag) = ens.evaluate(0.0);
        Ok(idx.iter().map(|i| mag[ens.core().iter().position(|c| c == i).unwrap()]).collect())
    };
    Ok((run(&BoundaryCondition::PLUS)?, run(&BoundaryCondition::MINUS)?))
}

fn half_gap(plus: &[f64], minus: &[f64]) -> f64 {
    0.5 * plus.iter().zip(minus).map(|(p, m)| p - m).sum::<f64>()
}

fn mcmc_gap(chains: &CoupledChains, idx: &[usize], weights: &[f64]) -> Estimate {
    let value = idx
        .iter()
        .zip(weights)
        .map(|(&i, w)| w * (chains.plus.estimates[i] - chains.minus.estimates[i]))
        .sum::<f64>();
    // The chains share randomness, so their errors are combined additively.
    let se = idx
        .iter()
        .zip(weights)
        .map(|(&i, w)| w * (chains.plus.std_error[i] + chains.minus.std_error[i]))
        .map(|e| e * e)
        .sum::<f64>()
        .sqrt();
    Estimate { value, std_error: se }
}

/// Positive-temperature `D_ell = 1/2 sum_{v in Lambda(ell)} [<s_v>^+ - <s_v>^-]` on `Lambda(3 ell)`.
pub fn d_post(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    engine: &Engine,
) -> Result<Estimate> {
    if ell == 0 {
        return Err(Error::domain("scale ell must be >= 1"));
    }
    let ball = Region::ball(Site::ORIGIN, 3 * ell);
    let core = Region::ball(Site::ORIGIN, ell);
    match engine {
        Engine::Exact => {
            let (p, m) = exact_magnetization_pair(&ball, core.sites(), coupling, field, params)?;
            Ok(Estimate::exact(half_gap(&p, &m)))
        }
        Engine::Mcmc(settings) => {
            let chains = coupled_heat_bath(&ball, coupling, field, params, settings)?;
            let idx: Vec<usize> = core.sites().iter().map(|&s| ball.index_of(s).unwrap()).collect();
            Ok(mcmc_gap(&chains, &idx, &vec![0.5; idx.len()]))
        }
    }
}

/// `B~_ell = J/2 sum_{v in d_v Lambda(2 ell)} [<s_v>^{ann,+} - <s_v>^{ann,-}]`.
///
/// Beyond nearest neighbours, `J/2` becomes `J_v / 4` with
/// `J_v = sum_{u : (u,v) in d_e Lambda(2 ell)} J_uv`.
pub fn b_tilde(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    engine: &Engine,
) -> Result<Estimate> {
    let annulus = Region::annulus(ell)?;
    let layer = separating_layer(ell, coupling);
    let weights: Vec<f64> = match coupling.nearest_neighbor_strength() {
        Some(j) => vec![0.5 * j; layer.len()],
        None => {
            let edges = Region::ball(Site::ORIGIN, 2 * ell).edge_boundary(coupling);
            layer
                .iter()
                .map(|&v| {
                    0.25 * edges
                        .iter()
                        .filter(|e| e.1 == v)
                        .map(|&(u, v)| coupling.strength(v.x - u.x, v.y - u.y))
                        .sum::<f64>()
                })
                .collect()
        }
    };
    let idx: Vec<usize> = layer
        .iter()
        .map(|&s| annulus.index_of(s).ok_or_else(|| Error::domain("separating layer leaves the annulus")))
        .collect::<Result<_>>()?;
    match engine {
        Engine::Exact => {
            require_positive_temperature(params)?;
            let plus = exact_gibbs(&annulus, &BoundaryCondition::PLUS, coupling, field, params)?;
            let minus = exact_gibbs(&annulus, &BoundaryCondition::MINUS, coupling, field, params)?;
            let v = idx
                .iter()
                .zip(&weights)
                .map(|(&i, w)| w * (plus.magnetization[i] - minus.magnetization[i]))
                .sum::<f64>();
            Ok(Estimate::exact(v))
        }
        Engine::Mcmc(settings) => {
            let chains = coupled_heat_bath(&annulus, coupling, field, params, settings)?;
            Ok(mcmc_gap(&chains, &idx, &weights))
        }
    }
}

/// Result of the `2 eps int D_ell(eta^{(t)}) dt` quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
    pub intervals: usize,
    /// Final relative (exact) or absolute (MCMC) difference between refinements.
    pub achieved_tol: f64,
    pub converged: bool,
}

/// Quadrature controls for the positive-temperature integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub initial_intervals: usize,
    pub max_intervals: usize,
    /// Required relative difference between successive refinements (exact engine).
    pub rel_tol: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { initial_intervals: 64, max_intervals: 1 << 16, rel_tol: 1e-4 }
    }
}

/// Integration half-width: forcing bound plus a thermal margin.
fn post_support(ell: u32, field: &FieldSample, params: &DisorderParams, coupling: &CouplingSpec) -> Result<f64> {
    Ok(forcing_bound(ell, field, params, coupling)? + 40.0 * params.temperature / params.epsilon)
}

/// `2 eps int D_ell(eta^{(t)}) dt` by trapezoid refinement.
pub fn surface_tension_post_integral(
    ell: u32,
    field: &FieldSample,
    params: &DisorderParams,
    coupling: &CouplingSpec,
    engine: &Engine,
    quadrature: &Quadrature,
) -> Result<IntegralEstimate> {
    require_positive_temperature(params)?;
    if ell == 0 {
        return Err(Error::domain("scale ell must be >= 1"));
    }
    let half = post_support(ell, field, params, coupling)?;
    let ball = Region::ball(Site::ORIGIN, 3 * ell);
    let core = Region::ball(Site::ORIGIN, ell);
    field.require_covers(&ball)?;
    let eps = params.epsilon;
    match engine {
        Engine::Exact => {
            let mask: Vec<bool> = ball.sites().iter().map(|&s| core.contains(s)).collect();
            let ens = |bc: &BoundaryCondition| -> Result<ConditionedEnsemble> {
                ConditionedEnsemble::new(&Problem::new(&ball, bc, coupling, field, params)?, &mask, params.temperature)
            };
            let plus = ens(&BoundaryCondition::PLUS)?;
            let minus = ens(&BoundaryCondition::MINUS)?;
            let d = |t: f64| half_gap(&plus.evaluate(eps * t).1, &minus.evaluate(eps * t).1);
            // Collective flips of the core sharpen steps of D to a width near T / (eps |core|).
            let resolution = params.temperature / (4.0 * eps * core.len() as f64);
            Ok(refine_exact(&d, -half, half, quadrature, resolution, 2.0 * eps))
        }
        Engine::Mcmc(settings) => {
            let d = |t: f64, node: u64| -> Result<Estimate> {
                let shifted = crate::disorder::shift_field(field, &core, t)?;
                let s = HeatBathSettings { seed: crate::disorder::derive_seed(settings.seed, node), ..*settings };
                d_post(ell, &shifted, params, coupling, &Engine::Mcmc(s))
            };
            refine_mcmc(&d, -half, half, quadrature, 2.0 * eps)
        }
    }
}

/// Trapezoid doubling; stops once the step is below `resolution` and two
/// successive refinements agree to `rel_tol`.
fn refine_exact(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    q: &Quadrature,
    resolution: f64,
    factor: f64,
) -> IntegralEstimate {
    let mut n = q.initial_intervals.max(2);
    let mut h = (b - a) / n as f64;
    let mut sum: f64 = 0.5 * (f(a) + f(b)) + (1..n).map(|i| f(a + i as f64 * h)).sum::<f64>();
    let mut estimate = sum * h;
    let mut diff = f64::INFINITY;
    let mut previous = f64::INFINITY;
    while n < q.max_intervals {
        let midpoints: f64 = (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum();
        sum += midpoints;
        n *= 2;
        h *= 0.5;
        let next = sum * h;
        previous = diff;
        diff = (next - estimate).abs() / next.abs().max(f64::MIN_POSITIVE);
        estimate = next;
        if h <= resolution && diff < q.rel_tol && previous < q.rel_tol {
            break;
        }
    }
    IntegralEstimate {
        value: factor * estimate,
        std_error: 0.0,
        intervals: n,
        achieved_tol: diff.max(previous),
        converged: h <= resolution && diff.max(previous) < q.rel_tol,
    }
}

fn refine_mcmc(
    f: &dyn Fn(f64, u64) -> Result<Estimate>,
    a: f64,
    b: f64,
    q: &Quadrature,
    factor: f64,
) -> Result<IntegralEstimate> {
    let mut n = q.initial_intervals.max(2);
    let mut nodes: Vec<(f64, Estimate)> = Vec::new();
    let eval = |t: f64| -> Result<Estimate> { f(t, t.to_bits()) };
    for i in 0..=n {
        let t = a + (b - a) * i as f64 / n as f64;
        nodes.push((t, eval(t)?));
    }
    let integrate = |nodes: &[(f64, Estimate)]| -> (f64, f64) {
        let mut v = 0.0;
        let mut var = 0.0;
        for w in nodes.windows(2) {
            let h = w[1].0 - w[0].0;
            v += 0.5 * h * (w[0].1.value + w[1].1.value);
            var += (0.5 * h).powi(2) * (w[0].1.std_error.powi(2) + w[1].1.std_error.powi(2));
        }
        (v, var.sqrt())
    };
    let (mut value, mut se) = integrate(&nodes);
    let mut diff = f64::INFINITY;
    let mut converged = false;
    while n < q.max_intervals {
        let mut refined = Vec::with_capacity(2 * nodes.len());
        for w in nodes.windows(2) {
            refined.push(w[0]);
            let t = 0.5 * (w[0].0 + w[1].0);
            refined.push((t, eval(t)?));
        }
        refined.push(*nodes.last().unwrap());
        nodes = refined;
        n *= 2;
        let (v, s) = integrate(&nodes);
        diff = (v - value).abs();
        value = v;
        se = s;
        if diff < 2.0 * se.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(IntegralEstimate { value: factor * value, std_error: factor * se, intervals: n, achieved_tol: factor * diff, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::sample_field;
    use crate::groundstate::minimize;

    fn nn() -> CouplingSpec {
        CouplingSpec::nearest_neighbor(1.0).unwrap()
    }

    #[test]
    fn single_site_closed_form() {
        let r = Region::custom([Site::ORIGIN]);
        let free = CouplingSpec::from_offsets([]).unwrap();
        let field = FieldSample::from_values(r.clone(), vec![0.7]).unwrap();
        let params = DisorderParams::new(0.2, 1.5, 0.8).unwrap();
        let g = exact_gibbs(&r, &BoundaryCondition::PLUS, &free, &field, &params).unwrap();
        let x: f64 = (0.2 + 1.5 * 0.7) / 0.8;
        assert!((g.magnetization[0] - x.tanh()).abs() < 1e-14);
        assert!((g.log_partition - (2.0 * x.cosh()).ln()).abs() < 1e-13);
    }

    #[test]
    fn low_temperature_matches_ground_state() {
        let r = Region::ball(Site::ORIGIN, 2);
        let params = DisorderParams::new(0.0, 1.0, 1e-3).unwrap();
        for seed in 0..10 {
            let field = sample_field(&r, seed);
            let gs = minimize(&r, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
            let g = exact_gibbs(&r, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
            for (m, s) in g.magnetization.iter().zip(gs.config.spins()) {
                assert!((m - s.value()).abs() < 1e-3, "seed {seed}");
            }
        }
    }

    #[test]
    fn spin_flip_symmetry() {
        let r = Region::ball(Site::ORIGIN, 2);
        let field = sample_field(&r, 9);
        let neg = FieldSample::from_values(r.clone(), field.values().iter().map(|v| -v).collect()).unwrap();
        let params = DisorderParams::new(0.3, 1.0, 1.3).unwrap();
        let a = exact_gibbs(&r, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
        let b = exact_gibbs(&r, &BoundaryCondition::MINUS, &nn(), &neg, &params.with_h(-0.3)).unwrap();
        for (x, y) in a.magnetization.iter().zip(&b.magnetization) {
            assert!((x + y).abs() < 1e-12);
        }
        assert!((a.log_partition - b.log_partition).abs() < 1e-12);
    }

    #[test]
    fn conditioned_ensemble_matches_direct_enumeration() {
        // Lambda(2) has 13 sites: enumerate directly and through the core/shell split.
        let r = Region::ball(Site::ORIGIN, 2);
        let core = Region::ball(Site::ORIGIN, 1);
        let params = DisorderParams::new(0.1, 1.0, 0.9).unwrap();
        for seed in 0..5 {
            let field = sample_field(&r, seed);
            let problem = Problem::new(&r, &BoundaryCondition::PLUS, &nn(), &field, &params).unwrap();
            let mask: Vec<bool> = r.sites().iter().map(|&s| core.contains(s)).collect();
            let ens = ConditionedEnsemble::new(&problem, &mask, params.temperature).unwrap();
            for &t in &[-1.3, 0.0, 0.4] {
                let shifted = crate::disorder::shift_field(&field, &core, t).unwrap();
                let direct = exact_gibbs(&r, &BoundaryCondition::PLUS, &nn(), &shifted, &params).unwrap();
                let (log_z, mag) = ens.evaluate(params.epsilon * t);
                assert!((log_z - direct.log_partition).abs() < 1e-10);
                for (k, &i) in ens.core().iter().enumerate() {
                    assert!((mag[k] - direct.magnetization[i]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn heat_bath_forced_limit() {
        let r = Region::ball(Site::ORIGIN, 2);
        let field = sample_field(&r, 4);
        let params = DisorderParams::new(0.0, 1e3, 1.0).unwrap();
        let s = HeatBathSettings { sweeps: 400, burn_in: BurnIn::Fixed(100), seed: 1 };
        let c = coupled_heat_bath(&r, &nn(), &field, &params, &s).unwrap();
        assert_eq!(c.domination_violations, 0);
        for (i, &site) in r.sites().iter().enumerate() {
            let sign = field.value_at(site).unwrap().signum();
            assert_eq!(c.plus.estimates[i], sign);
            assert_eq!(c.minus.estimates[i], sign);
        }
    }

    #[test]
    fn zero_temperature_rejected() {
        let r = Region::ball(Site::ORIGIN, 1);
        let field = FieldSample::zeros(r.clone());
        let params = DisorderParams::ground(0.0, 1.0).unwrap();
        assert!(matches!(
            exact_gibbs(&r, &BoundaryCondition::PLUS, &nn(), &field, &params),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn budget_enforced() {
        let r = Region::ball(Site::ORIGIN, 4);
        let field = FieldSample::zeros(r.clone());
        let params = DisorderParams::new(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            exact_gibbs(&r, &BoundaryCondition::PLUS, &nn(), &field, &params),
            Err(Error::Budget { .. })
        ));
    }
}
