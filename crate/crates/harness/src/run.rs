//! Dispatch of an experiment config to the core modules.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rfim_core::disorder::{chi, sample_field, DisorderParams};
use rfim_core::estimators::{
    covariance_bounds, decay_fit, m_scan, replica_seed, var_bound_report, variance_d, BoundCheck, ChainSettings,
    MeanEstimate, Verdict,
};
use rfim_core::gibbs::{
    b_tilde, d_post, surface_tension_post_exact, surface_tension_post_integral, Engine, Quadrature,
};
use rfim_core::groundstate::{avalanche_scan, flip_thresholds, minimize, scale_observables, BoundaryCondition, Spin};
use rfim_core::hierarchical::{
    block_density, curdle, exceptional_percolation, high_disorder_check, large_field_event, mandelbrot_percolation,
    BlockPartition,
};
use rfim_core::lattice::{CouplingSpec, Region, Site};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{EngineKind, ExperimentConfig, Kind};
use crate::output::{csv_body, write_atomic, Row, VerdictRow, SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailedReplica {
    pub replica: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    #[serde(skip)]
    pub rows: Vec<Row>,
    pub verdicts: Vec<VerdictRow>,
    pub summary: Value,
    pub failed_replicas: Vec<FailedReplica>,
    #[serde(skip)]
    pub grid: Option<String>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl ResultRecord {
    pub fn csv(&self) -> String {
        csv_body(&self.rows)
    }

    pub fn summary_json(&self) -> String {
        let v = json!({
            "schema_version": SCHEMA_VERSION,
            "kind": self.config.kind.name(),
            "version": self.version,
            "config_hash": self.config_hash,
            "config": self.config,
            "verdicts": self.verdicts,
            "failed_replicas": self.failed_replicas,
            "summary": self.summary,
        });
        serde_json::to_string_pretty(&v).expect("summary serializes") + "\n"
    }

    pub fn failed(&self) -> bool {
        !self.failed_replicas.is_empty() || self.verdicts.iter().any(|v| v.verdict == Verdict::Fail)
    }

    /// `results.csv`, `summary.json`, `timing.json` and optional `grid.txt` in `dir`.
    ///
    /// Timing lives in its own file so the other outputs are reproducible byte for byte.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("results.csv"), self.csv().as_bytes()).context("writing results.csv")?;
        write_atomic(&dir.join("summary.json"), self.summary_json().as_bytes()).context("writing summary.json")?;
        let timing = json!({ "wall_seconds": self.wall_seconds, "threads": rayon::current_num_threads() });
        write_atomic(&dir.join("timing.json"), (serde_json::to_string_pretty(&timing)? + "\n").as_bytes())?;
        if let Some(g) = &self.grid {
            write_atomic(&dir.join("grid.txt"), g.as_bytes()).context("writing grid.txt")?;
        }
        Ok(())
    }
}

struct Ctx {
    params: DisorderParams,
    coupling: CouplingSpec,
    engine: Engine,
}

struct Output {
    rows: Vec<Row>,
    verdicts: Vec<VerdictRow>,
    summary: Value,
    failed: Vec<FailedReplica>,
    grid: Option<String>,
}

impl Output {
    fn new() -> Self {
        Output { rows: Vec::new(), verdicts: Vec::new(), summary: json!({}), failed: Vec::new(), grid: None }
    }

    fn verdict(&mut self, check: impl Into<String>, verdict: Verdict, margin: f64, detail: impl Into<String>) {
        self.verdicts.push(VerdictRow { check: check.into(), verdict, margin, detail: detail.into() });
    }

    fn bound(&mut self, check: &str, b: &BoundCheck) {
        let detail = format!("estimate {} +- {}, bound {} +- {}", b.estimate, b.estimate_se, b.bound, b.bound_se);
        self.verdict(check, b.verdict, b.margin, detail);
    }

    fn mean_row(&mut self, series: &str, x: f64, seed: u64, xs: &[f64]) {
        if !xs.is_empty() {
            let e = MeanEstimate::from_samples(xs);
            self.rows.push(Row::aggregate(series, x, seed, e.mean, e.std_error));
        }
    }
}

/// Runs replicas in parallel; failures are recorded rather than dropped.
fn per_replica<T: Send>(
    replicas: usize,
    base_seed: u64,
    out: &mut Output,
    f: impl Fn(u64) -> rfim_core::Result<T> + Sync,
) -> Vec<(u64, u64, T)> {
    let results: Vec<(u64, u64, rfim_core::Result<T>)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let seed = replica_seed(base_seed, r);
            (r, seed, f(seed))
        })
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    for (r, seed, res) in results {
        match res {
            Ok(t) => ok.push((r, seed, t)),
            Err(e) => out.failed.push(FailedReplica { replica: r, seed, error: e.to_string() }),
        }
    }
    ok
}

fn count_check(out: &mut Output, check: &str, violations: usize, total: usize, margin: f64) {
    let verdict = if violations == 0 { Verdict::Pass } else { Verdict::Fail };
    out.verdict(check, verdict, margin, format!("{violations} violations in {total} samples"));
}

pub fn run(config: &ExperimentConfig) -> Result<ResultRecord> {
    config.validate()?;
    let ctx = Ctx { params: config.disorder()?, coupling: config.coupling_spec()?, engine: config.engine_spec() };
    let start = Instant::now();
    let out = match config.kind {
        Kind::MScan => run_m_scan(config, &ctx)?,
        Kind::SurfaceTension => run_tension(config, &ctx),
        Kind::Variance => run_variance(config, &ctx)?,
        Kind::Covariance => run_covariance(config, &ctx)?,
        Kind::PosT => run_post(config, &ctx),
        Kind::Curdling => run_curdling(config, &ctx),
        Kind::Mandelbrot => run_mandelbrot(config)?,
        Kind::HighDisorder => run_high_disorder(config, &ctx)?,
        Kind::Avalanche => run_avalanche(config, &ctx),
    };
    Ok(ResultRecord {
        config: config.clone(),
        config_hash: config.params_hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        rows: out.rows,
        verdicts: out.verdicts,
        summary: out.summary,
        failed_replicas: out.failed,
        grid: out.grid,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs inside a dedicated pool of `threads` workers when given.
pub fn run_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<ResultRecord> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| run(config)),
        None => run(config),
    }
}

fn run_m_scan(c: &ExperimentConfig, ctx: &Ctx) -> Result<Output> {
    let mut out = Output::new();
    let s = m_scan(&c.scales, &ctx.params, &ctx.coupling, c.replicas, c.base_seed, &ctx.engine)?;
    for (i, &l) in s.scales.iter().enumerate() {
        out.rows.push(Row::aggregate("m", l as f64, c.base_seed, s.mean[i], s.std_error[i]));
        if let Some(w) = &s.wilson {
            out.rows.push(Row::aggregate("m_wilson_lo", l as f64, c.base_seed, w[i].0, 0.0));
            out.rows.push(Row::aggregate("m_wilson_hi", l as f64, c.base_seed, w[i].1, 0.0));
        }
    }
    out.summary = json!({ "series": s, "decay_fit": decay_fit(&s).ok() });
    Ok(out)
}

fn run_tension(c: &ExperimentConfig, ctx: &Ctx) -> Output {
    let mut out = Output::new();
    let max = *c.scales.last().unwrap();
    let region = Region::ball(Site::ORIGIN, 3 * max);
    let rows = per_replica(c.replicas, c.base_seed, &mut out, |seed| {
        let field = sample_field(&region, seed);
        c.scales
            .iter()
            .map(|&ell| {
                let obs = scale_observables(ell, &field, &ctx.params, &ctx.coupling)?;
                let integral = match c.thresholds {
                    Some(m) => Some(2.0 * ctx.params.epsilon * flip_thresholds(ell, &field, &ctx.params, &ctx.coupling, m)?.integral()),
                    None => None,
                };
                Ok((ell, obs.d as f64, obs.b, obs.g, obs.tension, integral))
            })
            .collect::<rfim_core::Result<Vec<_>>>()
    });
    for &ell in &c.scales {
        let k = c.scales.iter().position(|&l| l == ell).unwrap();
        let x = ell as f64;
        let mut cols: [Vec<f64>; 4] = Default::default();
        let (mut bound_viol, mut bound_margin) = (0, f64::INFINITY);
        let (mut id_viol, mut id_worst, mut id_n) = (0, 0.0f64, 0);
        for (r, seed, v) in &rows {
            let (_, d, b, g, t, integral) = v[k];
            for (i, (name, val)) in [("d", d), ("b", b), ("g", g), ("tension", t)].into_iter().enumerate() {
                out.rows.push(Row::replica(name, x, *r, *seed, val));
                cols[i].push(val);
            }
            bound_margin = bound_margin.min(4.0 * b - t);
            if t > 4.0 * b + 1e-9 {
                bound_viol += 1;
            }
            if let Some(rhs) = integral {
                out.rows.push(Row::replica("threshold_integral", x, *r, *seed, rhs));
                let scaled = (t - rhs).abs() / t.abs().max(1.0);
                id_worst = id_worst.max(scaled);
                id_n += 1;
                if scaled > 1e-5 {
                    id_viol += 1;
                }
            }
        }
        for (i, name) in ["d", "b", "g", "tension"].iter().enumerate() {
            out.mean_row(&format!("mean_{name}"), x, c.base_seed, &cols[i]);
        }
        count_check(&mut out, &format!("ell={ell}: tension <= 4B samplewise"), bound_viol, rows.len(), bound_margin);
        if id_n > 0 {
            count_check(
                &mut out,
                &format!("ell={ell}: tension = 2 eps int D dt"),
                id_viol,
                id_n,
                1e-5 - id_worst,
            );
        }
    }
    out
}

fn run_variance(c: &ExperimentConfig, ctx: &Ctx) -> Result<Output> {
    let mut out = Output::new();
    let mut reports = Vec::new();
    for &ell in &c.scales {
        let rep = variance_d(ell, &ctx.params, &ctx.coupling, c.replicas, c.base_seed)?;
        let x = ell as f64;
        out.rows.push(Row::aggregate("mean_d", x, c.base_seed, rep.mean_d.mean, rep.mean_d.std_error));
        out.rows.push(Row::aggregate("var_d", x, c.base_seed, rep.var_d, 0.0));
        out.rows.push(Row::aggregate("m_lower", x, c.base_seed, rep.m_lower_scale.mean, rep.m_lower_scale.std_error));
        out.rows.push(Row::aggregate("m_upper", x, c.base_seed, rep.m_upper_scale.mean, rep.m_upper_scale.std_error));
        match (&rep.anti_concentration, rep.bound) {
            (Some(a), Some(bound)) => {
                out.rows.push(Row::aggregate("anti_concentration", x, c.base_seed, a.p, a.std_error));
                out.rows.push(Row::aggregate("anti_concentration_bound", x, c.base_seed, bound, 0.0));
                let margin = a.p + 3.0 * a.std_error - bound;
                let verdict = if margin >= 0.0 { Verdict::Pass } else { Verdict::Fail };
                out.verdict(format!("ell={ell}: P(D < E D / 2) >= chi bound"), verdict, margin, format!("p = {} +- {}, bound {bound}", a.p, a.std_error));
            }
            _ => out.verdict(format!("ell={ell}: anti-concentration"), Verdict::Inconclusive, 0.0, "zero mean or vanishing m(4 ell)"),
        }
        if let Some(alpha) = c.alpha {
            let scales: Vec<u32> = (1..=4 * ell).collect();
            let series = m_scan(&scales, &ctx.params, &ctx.coupling, c.replicas, c.base_seed, &Engine::Exact)?;
            let vb = var_bound_report(&series, ell, alpha, rep.mean_d.mean, rep.var_d)?;
            out.verdict(format!("ell={ell}: conditional variance bound"), vb.verdict, vb.bound - vb.ratio.unwrap_or(f64::NAN), vb.reasons.join("; "));
            reports.push(json!({ "variance": rep, "var_bound": vb }));
        } else {
            reports.push(json!({ "variance": rep }));
        }
    }
    out.summary = json!({ "reports": reports });
    Ok(out)
}

fn run_covariance(c: &ExperimentConfig, ctx: &Ctx) -> Result<Output> {
    let mut out = Output::new();
    let chain = ChainSettings { sweeps: c.mcmc.sweeps, burn_in: c.mcmc.burn_in.unwrap_or(c.mcmc.sweeps / 4) };
    let mut reports = Vec::new();
    for &ell in &c.scales {
        let (u, v) = c.covariance_sites(ell, ctx.coupling.range());
        let rep = covariance_bounds(u, v, ell, &ctx.params, &ctx.coupling, c.replicas, c.base_seed, &chain)?;
        let x = ell as f64;
        out.rows.push(Row::aggregate("truncated", x, c.base_seed, rep.truncated.estimate, rep.truncated.estimate_se));
        out.rows.push(Row::aggregate("covariance", x, c.base_seed, rep.covariance.estimate, rep.covariance.estimate_se));
        out.rows.push(Row::aggregate("m", x, c.base_seed, rep.m_hat.mean, rep.m_hat.std_error));
        out.bound(&format!("ell={ell}: E<s_u; s_v> <= 2 m(ell)"), &rep.truncated);
        out.bound(&format!("ell={ell}: Cov(<s_u>, <s_v>) <= 4 m(ell)"), &rep.covariance);
        reports.push(rep);
    }
    out.summary = json!({ "reports": reports });
    Ok(out)
}

fn run_post(c: &ExperimentConfig, ctx: &Ctx) -> Output {
    let mut out = Output::new();
    let max = *c.scales.last().unwrap();
    let region = Region::ball(Site::ORIGIN, 3 * max);
    let quad = Quadrature::default();
    let exact = c.engine == EngineKind::Exact;
    let rows = per_replica(c.replicas, c.base_seed, &mut out, |seed| {
        let field = sample_field(&region, seed);
        let engine = match ctx.engine {
            Engine::Mcmc(s) => Engine::Mcmc(rfim_core::gibbs::HeatBathSettings { seed, ..s }),
            e => e,
        };
        c.scales
            .iter()
            .map(|&ell| {
                let integral = surface_tension_post_integral(ell, &field, &ctx.params, &ctx.coupling, &engine, &quad)?;
                let bt = b_tilde(ell, &field, &ctx.params, &ctx.coupling, &engine)?;
                let d = d_post(ell, &field, &ctx.params, &ctx.coupling, &engine)?;
                let ex = if exact { Some(surface_tension_post_exact(ell, &field, &ctx.params, &ctx.coupling)?) } else { None };
                Ok((integral, bt, d, ex))
            })
            .collect::<rfim_core::Result<Vec<_>>>()
    });
    for (k, &ell) in c.scales.iter().enumerate() {
        let x = ell as f64;
        let (mut viol, mut margin, mut worst_rel) = (0, f64::INFINITY, 0.0f64);
        let (mut ts, mut bs) = (Vec::new(), Vec::new());
        for (r, seed, v) in &rows {
            let (integral, bt, d, ex) = &v[k];
            out.rows.push(Row { std_error: integral.std_error, ..Row::replica("tension_integral", x, *r, *seed, integral.value) });
            out.rows.push(Row { std_error: bt.std_error, ..Row::replica("b_tilde", x, *r, *seed, bt.value) });
            out.rows.push(Row { std_error: d.std_error, ..Row::replica("d", x, *r, *seed, d.value) });
            let t = ex.unwrap_or(integral.value);
            if let Some(e) = ex {
                out.rows.push(Row::replica("tension_exact", x, *r, *seed, *e));
                worst_rel = worst_rel.max((integral.value - e).abs() / e.abs().max(1e-300));
            }
            let sigma = 3.0 * integral.std_error.hypot(8.0 * bt.std_error);
            margin = margin.min(8.0 * bt.value - t);
            if t > 8.0 * bt.value + 1e-9 + sigma {
                viol += 1;
            }
            ts.push(t);
            bs.push(bt.value);
        }
        out.mean_row("mean_tension", x, c.base_seed, &ts);
        out.mean_row("mean_b_tilde", x, c.base_seed, &bs);
        count_check(&mut out, &format!("ell={ell}: tension <= 8 B~ samplewise"), viol, rows.len(), margin);
        if exact {
            let verdict = if worst_rel <= 1e-3 { Verdict::Pass } else { Verdict::Fail };
            out.verdict(format!("ell={ell}: integral = exact free-energy tension"), verdict, 1e-3 - worst_rel, format!("worst relative error {worst_rel}"));
        }
    }
    out
}

fn run_curdling(c: &ExperimentConfig, ctx: &Ctx) -> Output {
    let mut out = Output::new();
    let levels = c.levels.unwrap();
    let window = BlockPartition::new(levels).block(0, 0);
    let j = ctx.coupling.nearest_neighbor_strength().unwrap();
    let p_event = if ctx.params.epsilon > 0.0 { chi(4.0 * j / ctx.params.epsilon) } else { 0.0 };
    let rows = per_replica(c.replicas, c.base_seed, &mut out, |seed| {
        let field = sample_field(&window, seed);
        let plus = curdle(&window, &field, &ctx.params, &ctx.coupling, levels, Spin::Plus)?;
        let minus = curdle(&window, &field, &ctx.params, &ctx.coupling, levels, Spin::Minus)?;
        let gs = minimize(&window, &BoundaryCondition::PLUS, &ctx.coupling, &field, &ctx.params)?;
        let mut forced_mismatch = 0;
        let mut screened_flip = 0;
        for (i, s) in window.sites().iter().enumerate() {
            let b = ctx.params.h + ctx.params.epsilon * field.value_at(*s).unwrap();
            if b.abs() > 4.0 * j && plus.tau.spins()[i] != Spin::from_sign(b) {
                forced_mismatch += 1;
            }
            if plus.is_interior_determined(i) && plus.tau.spins()[i] != minus.tau.spins()[i] {
                screened_flip += 1;
            }
        }
        let mut events = Vec::new();
        for level in 0..=levels {
            let part = BlockPartition::new(level);
            let per = 3i32.pow(levels - level);
            let mut hits = 0;
            for b in 0..per {
                for a in 0..per {
                    if large_field_event(&part.block(a, b), &field, &ctx.params, &ctx.coupling)? {
                        hits += 1;
                    }
                }
            }
            events.push((hits, (per * per) as usize));
        }
        let capped = plus.capped.iter().filter(|&&x| x).count() as f64 / window.len() as f64;
        let text = plus.to_text();
        Ok((plus.agreement(&gs.config)?, capped, forced_mismatch, screened_flip, events, text))
    });
    let (mut mism, mut flips) = (0, 0);
    for (r, seed, (agree, capped, fm, sf, _, text)) in &rows {
        out.rows.push(Row::replica("tau_ground_agreement", levels as f64, *r, *seed, *agree));
        out.rows.push(Row::replica("capped_fraction", levels as f64, *r, *seed, *capped));
        mism += fm;
        flips += sf;
        if *r == 0 {
            out.grid = Some(text.clone());
        }
    }
    let mut rates = Vec::new();
    for level in 0..=levels as usize {
        let hits: usize = rows.iter().map(|x| x.2 .4[level].0).sum();
        let total: usize = rows.iter().map(|x| x.2 .4[level].1).sum();
        if total > 0 {
            let rate = hits as f64 / total as f64;
            let se = (p_event * (1.0 - p_event) / total as f64).sqrt();
            out.rows.push(Row::aggregate("large_field_rate", level as f64, c.base_seed, rate, se));
            rates.push(json!({ "level": level, "rate": rate, "blocks": total }));
        }
    }
    out.rows.push(Row::aggregate("large_field_probability", 0.0, c.base_seed, p_event, 0.0));
    count_check(&mut out, "tau = sign(h + eps eta) at forced sites", mism, rows.len(), 0.0);
    count_check(&mut out, "screened tau independent of the window boundary", flips, rows.len(), 0.0);
    out.summary = json!({ "large_field_probability": p_event, "rates": rates });
    out
}

fn run_mandelbrot(c: &ExperimentConfig) -> Result<Output> {
    let mut out = Output::new();
    let levels = c.levels.unwrap_or(4);
    let mut stats = Vec::new();
    for &p in &c.p_grid {
        let s = mandelbrot_percolation(p, levels, c.replicas, c.base_seed)?;
        out.rows.push(Row::aggregate("crossing", p, c.base_seed, s.crossing.p, s.crossing.std_error));
        out.rows.push(Row::aggregate("area", p, c.base_seed, s.area_fraction.mean, s.area_fraction.std_error));
        out.rows.push(Row::aggregate("expected_area", p, c.base_seed, s.expected_area, 0.0));
        for (r, prop) in &s.connectivity {
            out.rows.push(Row::aggregate(&format!("connectivity_p{p}"), *r as f64, c.base_seed, prop.p, prop.std_error));
        }
        let b = BoundCheck::upper((s.area_fraction.mean - s.expected_area).abs(), s.area_fraction.std_error, 0.0, 0.0);
        out.verdict(format!("p={p}: area fraction = (1-p)^n"), b.verdict, b.margin, format!("{} +- {}", s.area_fraction.mean, s.area_fraction.std_error));
        stats.push(s);
    }
    out.summary = json!({ "stats": stats });
    Ok(out)
}

fn run_high_disorder(c: &ExperimentConfig, ctx: &Ctx) -> Result<Output> {
    let mut out = Output::new();
    let report = high_disorder_check(&ctx.params, &ctx.coupling)?;
    out.rows.push(Row::aggregate("exceptional_prob", 0.0, c.base_seed, report.exceptional_prob, 0.0));
    let radius = *c.scales.last().unwrap();
    let series = exceptional_percolation(radius, &ctx.params, &ctx.coupling, c.replicas, c.base_seed, true)?;
    out.rows.push(Row::aggregate("open_fraction", 0.0, c.base_seed, series.open_fraction.mean, series.open_fraction.std_error));
    for (l, prop) in &series.connectivity {
        out.rows.push(Row::aggregate("connectivity", *l as f64, c.base_seed, prop.p, prop.std_error));
    }
    count_check(&mut out, "closed sites follow sign(h + eps eta)", series.forced_violations.unwrap_or(0), c.replicas, 0.0);
    let mut blocks = Vec::new();
    for &ell in c.scales.iter().filter(|&&l| l >= 1) {
        let b = block_density(ell, &ctx.params, &ctx.coupling, c.replicas, c.base_seed)?;
        let x = ell as f64;
        out.rows.push(Row::aggregate("block_prob", x, c.base_seed, b.block_prob.p, b.block_prob.std_error));
        out.rows.push(Row::aggregate("block_m", x, c.base_seed, b.m_hat.mean, b.m_hat.std_error));
        out.rows.push(Row::aggregate("block_site_union_bound", x, c.base_seed, b.site_union_bound, 0.0));
        let check = BoundCheck::upper(b.block_prob.p, b.block_prob.std_error, b.site_union_bound, 0.0);
        out.bound(&format!("ell={ell}: block probability <= (2 ell)^2 m(ell)"), &check);
        blocks.push(b);
    }
    out.summary = json!({ "regime": report, "exceptional": series, "blocks": blocks });
    Ok(out)
}

fn run_avalanche(c: &ExperimentConfig, ctx: &Ctx) -> Output {
    let mut out = Output::new();
    let region = Region::ball(Site::ORIGIN, *c.scales.last().unwrap());
    let rows = per_replica(c.replicas, c.base_seed, &mut out, |seed| {
        let field = sample_field(&region, seed);
        avalanche_scan(&region, &field, &ctx.coupling, &ctx.params, &c.h_grid)
    });
    for (r, seed, steps) in &rows {
        for s in steps {
            out.rows.push(Row::replica("flipped", s.h, *r, *seed, s.clusters.iter().sum::<usize>() as f64));
            out.rows.push(Row::replica("largest_cluster", s.h, *r, *seed, s.clusters.first().copied().unwrap_or(0) as f64));
        }
    }
    for (i, &h) in c.h_grid.iter().enumerate() {
        let flipped: Vec<f64> = rows.iter().map(|x| x.2[i].clusters.iter().sum::<usize>() as f64).collect();
        out.mean_row("mean_flipped", h, c.base_seed, &flipped);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_configs_give_identical_bytes() {
        let mut c = ExperimentConfig::default_for(Kind::SurfaceTension);
        c.replicas = 6;
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(a.summary_json(), b.summary_json());
        assert!(!a.failed());
    }

    #[test]
    fn zero_replicas_rejected_before_work() {
        let mut c = ExperimentConfig::default_for(Kind::MScan);
        c.replicas = 0;
        assert!(run(&c).is_err());
    }

    #[test]
    fn every_kind_runs_small() {
        for kind in [Kind::MScan, Kind::Curdling, Kind::Mandelbrot, Kind::HighDisorder, Kind::Avalanche, Kind::PosT, Kind::Covariance, Kind::Variance] {
            let mut c = ExperimentConfig::default_for(kind);
            c.replicas = match kind {
                Kind::Variance => 100,
                Kind::Covariance => 4,
                _ => 3,
            };
            if kind == Kind::MScan {
                c.scales = vec![1, 2];
            }
            if kind == Kind::PosT {
                c.replicas = 1;
            }
            if kind == Kind::Covariance {
                c.mcmc.sweeps = 200;
                c.mcmc.burn_in = Some(50);
            }
            let rec = run(&c).unwrap_or_else(|e| panic!("{}: {e}", kind.name()));
            assert!(rec.failed_replicas.is_empty(), "{}: {:?}", kind.name(), rec.failed_replicas);
            assert!(!rec.rows.is_empty());
        }
    }
}
