//! Experiment configuration: TOML on disk, resolved and validated before dispatch.

use std::path::{Path, PathBuf};

use rfim_core::disorder::DisorderParams;
use rfim_core::gibbs::{BurnIn, Engine, HeatBathSettings};
use rfim_core::groundstate::ThresholdMethod;
use rfim_core::lattice::{CouplingSpec, Site};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    MScan,
    SurfaceTension,
    Variance,
    Covariance,
    #[serde(rename = "posT", alias = "pos-t")]
    PosT,
    Curdling,
    Mandelbrot,
    HighDisorder,
    Avalanche,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::MScan => "m-scan",
            Kind::SurfaceTension => "surface-tension",
            Kind::Variance => "variance",
            Kind::Covariance => "covariance",
            Kind::PosT => "posT",
            Kind::Curdling => "curdling",
            Kind::Mandelbrot => "mandelbrot",
            Kind::HighDisorder => "high-disorder",
            Kind::Avalanche => "avalanche",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Exact,
    Mcmc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    #[serde(default)]
    pub h: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub temperature: f64,
}

/// Either a nearest-neighbour strength or explicit `(dx, dy, J)` offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub j: Option<f64>,
    pub offsets: Option<Vec<(i32, i32, f64)>>,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection { j: Some(1.0), offsets: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub sweeps: usize,
    /// Omitted means automatic burn-in.
    pub burn_in: Option<usize>,
}

impl Default for McmcSection {
    fn default() -> Self {
        McmcSection { sweeps: 4000, burn_in: Some(1000) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub params: ParamsSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub scales: Vec<u32>,
    pub replicas: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_engine")]
    pub engine: EngineKind,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Surface tension: flip-threshold method; omitted skips the threshold identity.
    pub thresholds: Option<ThresholdMethod>,
    /// Variance: stretch exponent for the conditional variance report.
    pub alpha: Option<f64>,
    /// Covariance: the two sites; defaults to a pair at distance `2 ell + R`.
    pub sites: Option<[(i32, i32); 2]>,
    /// Mandelbrot: removal probabilities.
    #[serde(default)]
    pub p_grid: Vec<f64>,
    /// Mandelbrot levels, or curdling `max_level`.
    pub levels: Option<u32>,
    /// Avalanche: increasing `h` grid.
    #[serde(default)]
    pub h_grid: Vec<f64>,
}

fn default_engine() -> EngineKind {
    EngineKind::Exact
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: "<inline>".into(), source })
    }

    /// Defaults for a kind, used when no config file is given.
    pub fn default_for(kind: Kind) -> Self {
        let mut c = ExperimentConfig {
            kind,
            params: ParamsSection { h: 0.0, epsilon: 1.0, temperature: 0.0 },
            coupling: CouplingSection::default(),
            scales: vec![1, 2, 4, 8],
            replicas: 1000,
            base_seed: 1,
            engine: EngineKind::Exact,
            mcmc: McmcSection::default(),
            output: default_output(),
            thresholds: None,
            alpha: None,
            sites: None,
            p_grid: Vec::new(),
            levels: None,
            h_grid: Vec::new(),
        };
        match kind {
            Kind::SurfaceTension | Kind::Variance => c.scales = vec![1, 2],
            Kind::Covariance => c.scales = vec![2],
            Kind::PosT => {
                c.scales = vec![1];
                c.params.temperature = 1.0;
                c.replicas = 20;
            }
            Kind::Curdling => {
                c.scales = Vec::new();
                c.levels = Some(3);
                c.params.epsilon = 2.0;
                c.replicas = 20;
            }
            Kind::Mandelbrot => {
                c.scales = Vec::new();
                c.levels = Some(4);
                c.p_grid = vec![0.05, 0.1, 0.2, 0.3];
                c.replicas = 200;
            }
            Kind::HighDisorder => {
                c.scales = vec![1, 2, 4];
                c.params.epsilon = 6.0;
            }
            Kind::Avalanche => {
                c.scales = vec![8];
                c.h_grid = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
                c.replicas = 10;
            }
            Kind::MScan => {}
        }
        c
    }

    pub fn disorder(&self) -> Result<DisorderParams, ConfigError> {
        DisorderParams::new(self.params.h, self.params.epsilon, self.params.temperature)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn coupling_spec(&self) -> Result<CouplingSpec, ConfigError> {
        let c = match (&self.coupling.j, &self.coupling.offsets) {
            (Some(j), None) => CouplingSpec::nearest_neighbor(*j),
            (None, Some(o)) => CouplingSpec::from_offsets(o.iter().copied()),
            _ => return Err(ConfigError::Invalid("coupling needs exactly one of `j` or `offsets`".into())),
        };
        c.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn engine_spec(&self) -> Engine {
        match self.engine {
            EngineKind::Exact => Engine::Exact,
            EngineKind::Mcmc => Engine::Mcmc(HeatBathSettings {
                sweeps: self.mcmc.sweeps,
                burn_in: self.mcmc.burn_in.map_or(BurnIn::Auto, BurnIn::Fixed),
                seed: self.base_seed,
            }),
        }
    }

    pub fn covariance_sites(&self, ell: u32, range: u32) -> (Site, Site) {
        match self.sites {
            Some([(a, b), (c, d)]) => (Site::new(a, b), Site::new(c, d)),
            None => {
                let d = (2 * ell + range) as i32;
                (Site::new(-d / 2, 0), Site::new(d - d / 2, 0))
            }
        }
    }

    /// Rejects configs that would fail inside a module, before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        let params = self.disorder()?;
        let coupling = self.coupling_spec()?;
        if self.replicas == 0 {
            return bad("replicas must be >= 1");
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scales must be strictly increasing");
        }
        let t0 = params.temperature == 0.0;
        let needs_scales = !matches!(self.kind, Kind::Mandelbrot | Kind::Curdling);
        if needs_scales && self.scales.is_empty() {
            return bad("scales must be non-empty");
        }
        let ell_kind = matches!(self.kind, Kind::SurfaceTension | Kind::Variance | Kind::Covariance | Kind::PosT);
        if ell_kind && self.scales.contains(&0) {
            return bad("scales must be >= 1 for this kind");
        }
        match self.kind {
            Kind::MScan if !t0 && self.engine == EngineKind::Exact && *self.scales.last().unwrap() > 3 => {
                bad("exact positive-temperature m-scan supports L <= 3; use engine = \"mcmc\"")
            }
            Kind::SurfaceTension | Kind::Variance if !t0 => bad("this kind is a zero-temperature experiment"),
            Kind::SurfaceTension if params.epsilon == 0.0 && self.thresholds.is_some() => {
                bad("flip thresholds need epsilon > 0")
            }
            Kind::Variance if self.replicas < 100 => bad("variance needs at least 100 replicas"),
            Kind::Variance if coupling.nearest_neighbor_strength().is_none() => bad("variance needs nearest-neighbour coupling"),
            Kind::Variance if self.alpha.is_some_and(|a| !(a > 0.0 && a <= 0.25)) => bad("alpha must lie in (0, 1/4]"),
            Kind::Covariance if self.replicas < 2 => bad("covariance needs at least 2 replicas"),
            Kind::PosT if t0 => bad("posT needs temperature > 0"),
            Kind::PosT if params.epsilon == 0.0 => bad("posT needs epsilon > 0"),
            Kind::PosT if self.engine == EngineKind::Exact && self.scales.iter().any(|&l| l > 1) => {
                bad("exact posT supports ell = 1; use engine = \"mcmc\"")
            }
            Kind::Curdling if coupling.nearest_neighbor_strength().is_none() => bad("curdling needs nearest-neighbour coupling"),
            Kind::Curdling if !(1..=7).contains(&self.levels.unwrap_or(0)) => bad("curdling needs levels in 1..=7"),
            Kind::Mandelbrot if self.p_grid.is_empty() => bad("mandelbrot needs a non-empty p_grid"),
            Kind::Mandelbrot if self.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) => bad("p_grid values must lie in [0, 1]"),
            Kind::Mandelbrot if self.levels.unwrap_or(0) > 7 => bad("mandelbrot levels must be <= 7"),
            Kind::HighDisorder if coupling.nearest_neighbor_strength().is_none() => {
                bad("high-disorder needs nearest-neighbour coupling")
            }
            Kind::HighDisorder if !t0 => bad("high-disorder is a zero-temperature experiment"),
            Kind::HighDisorder if self.replicas < 2 => bad("high-disorder needs at least 2 replicas"),
            Kind::Avalanche if self.h_grid.len() < 2 || self.h_grid.windows(2).any(|w| w[0] >= w[1]) => {
                bad("avalanche needs a strictly increasing h_grid with >= 2 points")
            }
            _ if self.engine == EngineKind::Mcmc && self.mcmc.sweeps < self.mcmc.burn_in.unwrap_or(0) + 20 => {
                bad("mcmc sweeps must exceed burn_in by at least 20")
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 over the canonical JSON of every numerics-affecting field.
    pub fn params_hash(&self) -> String {
        let mut copy = self.clone();
        copy.output = PathBuf::new();
        let bytes = serde_json::to_vec(&copy).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_file() {
        let c = ExperimentConfig::from_toml(
            "kind = \"m-scan\"\nreplicas = 10\nscales = [1, 2]\n[params]\nepsilon = 1.5\n",
        )
        .unwrap();
        assert_eq!(c.kind, Kind::MScan);
        assert_eq!(c.coupling, CouplingSection::default());
        c.validate().unwrap();
    }

    #[test]
    fn zero_replicas_rejected() {
        let mut c = ExperimentConfig::default_for(Kind::MScan);
        c.replicas = 0;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("kind = \"m-scan\"\nreplicas = 1\nbogus = 2\n[params]\nepsilon = 1\n").is_err());
    }

    #[test]
    fn every_default_is_valid() {
        for k in [
            Kind::MScan,
            Kind::SurfaceTension,
            Kind::Variance,
            Kind::Covariance,
            Kind::PosT,
            Kind::Curdling,
            Kind::Mandelbrot,
            Kind::HighDisorder,
            Kind::Avalanche,
        ] {
            ExperimentConfig::default_for(k).validate().unwrap_or_else(|e| panic!("{}: {e}", k.name()));
        }
    }

    #[test]
    fn hash_ignores_output_only() {
        let a = ExperimentConfig::default_for(Kind::MScan);
        let mut b = a.clone();
        b.output = "elsewhere".into();
        assert_eq!(a.params_hash(), b.params_hash());
        b.base_seed += 1;
        assert_ne!(a.params_hash(), b.params_hash());
    }
}
