use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rfim_core::estimators::Verdict;
use rfim_lab::config::{EngineKind, ExperimentConfig, Kind};
use rfim_lab::run::run_with_threads;
use rfim_lab::verify::{verify_suite, Level};

#[derive(Parser)]
#[command(name = "rfim", version, about = "Random-field Ising model laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Origin magnetization gap m(L) over a list of scales.
    Mscan(Common),
    /// Surface tension, B, and flip-threshold identity at T = 0.
    Tension(Common),
    /// Variance and anti-concentration of the integrated disagreement.
    Variance(Common),
    /// Truncated correlation and covariance across a separating annulus.
    Covariance(Common),
    /// Positive-temperature tension, B~ and the free-energy difference.
    Post(Common),
    /// Block curdling of a single window.
    Curdle(Common),
    /// Fractal (Mandelbrot) percolation crossing and connectivity.
    Mandelbrot(Common),
    /// High-disorder regime: exceptional-site percolation and block density.
    Highdisorder(Common),
    /// Ground-state avalanches along an increasing h grid.
    Avalanche(Common),
    /// Run the verification suite.
    Verify {
        #[arg(value_enum, default_value = "quick")]
        level: Level,
        #[arg(long, env = "RFIM_THREADS")]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults for the subcommand otherwise.
    #[arg(long, env = "RFIM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "RFIM_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "RFIM_REPLICAS")]
    replicas: Option<usize>,
    #[arg(long, env = "RFIM_THREADS")]
    threads: Option<usize>,
    #[arg(long, value_enum, env = "RFIM_ENGINE")]
    engine: Option<EngineKind>,
    /// Output directory.
    #[arg(long, env = "RFIM_OUT")]
    out: Option<PathBuf>,
}

fn experiment(kind: Kind, c: Common) -> Result<ExitCode> {
    let mut config = match &c.config {
        Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default_for(kind),
    };
    if config.kind != kind {
        bail!("config kind {} does not match subcommand {}", config.kind.name(), kind.name());
    }
    if let Some(s) = c.seed {
        config.base_seed = s;
    }
    if let Some(r) = c.replicas {
        config.replicas = r;
    }
    if let Some(e) = c.engine {
        config.engine = e;
    }
    if let Some(o) = c.out {
        config.output = o;
    }
    let record = run_with_threads(&config, c.threads)?;
    record.write(&config.output)?;
    for v in &record.verdicts {
        println!("{:<13} {:<40} margin {:>12.4e}  {}", format!("{:?}", v.verdict).to_uppercase(), v.check, v.margin, v.detail);
    }
    for f in &record.failed_replicas {
        eprintln!("replica {} (seed {}) failed: {}", f.replica, f.seed, f.error);
    }
    println!("wrote {} ({:.2} s)", config.output.display(), record.wall_seconds);
    Ok(if record.failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn verify(level: Level, threads: Option<usize>) -> Result<ExitCode> {
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| verify_suite(level)),
        None => verify_suite(level),
    };
    for r in &results {
        let tag = if r.verdict == Verdict::Pass { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {} ({:.1} s): {}", r.id, r.claim, r.seconds, r.detail);
    }
    Ok(if results.iter().all(|r| r.verdict == Verdict::Pass) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Mscan(c) => experiment(Kind::MScan, c),
        Command::Tension(c) => experiment(Kind::SurfaceTension, c),
        Command::Variance(c) => experiment(Kind::Variance, c),
        Command::Covariance(c) => experiment(Kind::Covariance, c),
        Command::Post(c) => experiment(Kind::PosT, c),
        Command::Curdle(c) => experiment(Kind::Curdling, c),
        Command::Mandelbrot(c) => experiment(Kind::Mandelbrot, c),
        Command::Highdisorder(c) => experiment(Kind::HighDisorder, c),
        Command::Avalanche(c) => experiment(Kind::Avalanche, c),
        Command::Verify { level, threads } => verify(level, threads),
    }
}
