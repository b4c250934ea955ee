//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleModel, DEFAULT_T_NORM};
use crate::error::{Error, Result};
use crate::evaluation::{Confidence, PolicyKind, DEFAULT_EPSILON_BOUNDS};
use crate::exposure::{MixtureComponent, NddSpec, DEFAULT_ZONE_MASS};
use crate::grid::{build_grid, Connectivity, OddConfig, ScenarioGrid};
use crate::library::{SearchSettings, ThresholdRule};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSetting {
    Fixed(f64),
    Auto(Auto),
}

impl Default for EpsilonSetting {
    fn default() -> Self {
        EpsilonSetting::Auto(Auto::Auto)
    }
}

/// Naturalistic samples: synthesized from a mixture, or read from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NddConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub sample_count: usize,
    /// Defaults to a stream of the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_zone_mass")]
    pub zone_mass: f64,
}

fn default_zone_mass() -> f64 {
    DEFAULT_ZONE_MASS
}

impl Default for NddConfig {
    fn default() -> Self {
        let spec = NddSpec::default();
        Self {
            csv: None,
            components: spec.components,
            sample_count: spec.sample_count,
            seed: None,
            zone_mass: DEFAULT_ZONE_MASS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub start_count: usize,
    pub weight: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_t_norm")]
    pub t_norm: f64,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
}

fn default_t_norm() -> f64 {
    DEFAULT_T_NORM
}

impl Default for SearchConfig {
    fn default() -> Self {
        let s = SearchSettings::default();
        Self {
            start_count: s.start_count,
            weight: s.weight,
            connectivity: s.connectivity,
            seed: None,
            t_norm: s.t_norm,
            threshold_rule: ThresholdRule::Relaxed,
        }
    }
}

/// Output file names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub ndd_csv: String,
    pub library: String,
    pub completeness: String,
    pub report: String,
    pub oracle: String,
    pub compare: String,
    /// Manifest stem; each command writes `<stem>-<command>.json`.
    pub manifest: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            ndd_csv: "ndd.csv".into(),
            library: "library.json".into(),
            completeness: "completeness.json".into(),
            report: "report.json".into(),
            oracle: "oracle.json".into(),
            compare: "compare.csv".into(),
            manifest: "manifest".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub odd: OddConfig,
    #[serde(default)]
    pub ndd: NddConfig,
    #[serde(default)]
    pub surrogate: VehicleModel,
    #[serde(default = "default_cav")]
    pub cav: VehicleModel,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "one")]
    pub m_factor: f64,
    #[serde(default)]
    pub epsilon: EpsilonSetting,
    #[serde(default = "default_epsilon_min")]
    pub epsilon_min: f64,
    #[serde(default = "default_epsilon_max")]
    pub epsilon_max: f64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_n_tests")]
    pub n_tests: usize,
    /// Simulations per sampled scenario (per-cell replications for stochastic surrogates too).
    #[serde(default = "one_usize")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_epsilon_min() -> f64 {
    DEFAULT_EPSILON_BOUNDS.0
}
fn default_epsilon_max() -> f64 {
    DEFAULT_EPSILON_BOUNDS.1
}
fn default_policy() -> PolicyKind {
    PolicyKind::EpsilonGreedy
}
fn default_n_tests() -> usize {
    500
}
fn default_alpha() -> f64 {
    0.05
}
fn default_beta() -> f64 {
    0.2
}

/// Vehicle under test: the default surrogate braking 10% harder.
pub fn default_cav() -> VehicleModel {
    let sm = VehicleModel::default();
    VehicleModel {
        max_decel: sm.max_decel * 1.1,
        ..sm
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20_190_805,
            odd: OddConfig::default(),
            ndd: NddConfig::default(),
            surrogate: VehicleModel::default(),
            cav: default_cav(),
            search: SearchConfig::default(),
            m_factor: 1.0,
            epsilon: EpsilonSetting::default(),
            epsilon_min: DEFAULT_EPSILON_BOUNDS.0,
            epsilon_max: DEFAULT_EPSILON_BOUNDS.1,
            policy: PolicyKind::EpsilonGreedy,
            n_tests: 500,
            replications: 1,
            alpha: 0.05,
            beta: 0.2,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let (Some(csv), Some(dir)) = (cfg.ndd.csv.as_mut(), path.parent()) {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.odd.validate()?;
        self.surrogate
            .validate()
            .map_err(|e| prefix("surrogate", e))?;
        self.cav.validate().map_err(|e| prefix("cav", e))?;
        let grid = build_grid(&self.odd)?;
        if self.ndd.csv.is_none() {
            self.ndd_spec()?
                .validate(&grid)
                .map_err(|e| prefix("ndd", e))?;
        }
        if !(self.ndd.zone_mass > 0.0 && self.ndd.zone_mass < 1.0) {
            return bad(format!(
                "ndd.zone_mass ({}) must be in (0, 1)",
                self.ndd.zone_mass
            ));
        }
        self.search_settings().validate()?;
        if !(self.m_factor >= 1.0 && self.m_factor.is_finite()) {
            return bad(format!("m_factor ({}) must be >= 1", self.m_factor));
        }
        if let EpsilonSetting::Fixed(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("epsilon ({e}) must be in (0, 1) or \"auto\""));
            }
        }
        if !(0.0 < self.epsilon_min
            && self.epsilon_min <= self.epsilon_max
            && self.epsilon_max < 1.0)
        {
            return bad("epsilon bounds must satisfy 0 < epsilon_min <= epsilon_max < 1".into());
        }
        if self.n_tests == 0 {
            return bad("n_tests must be >= 1".into());
        }
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        crate::evaluation::z_alpha(self.alpha).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !(self.beta > 0.0) {
            return bad(format!("beta ({}) must be > 0", self.beta));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<ScenarioGrid> {
        build_grid(&self.odd)
    }

    pub fn ndd_spec(&self) -> Result<NddSpec> {
        if self.ndd.csv.is_some() {
            return Err(Error::InvalidConfig(
                "ndd is read from csv, not synthesized".into(),
            ));
        }
        Ok(NddSpec {
            components: self.ndd.components.clone(),
            sample_count: self.ndd.sample_count,
            seed: self
                .ndd
                .seed
                .unwrap_or_else(|| rng::derive_seed(self.seed, 10)),
        })
    }

    pub fn search_settings(&self) -> SearchSettings {
        SearchSettings {
            start_count: self.search.start_count,
            weight: self.search.weight,
            connectivity: self.search.connectivity,
            seed: self
                .search
                .seed
                .unwrap_or_else(|| rng::derive_seed(self.seed, 11)),
            t_norm: self.search.t_norm,
            memoize: true,
        }
    }

    /// Base seed for the surrogate's challenge field and objective.
    pub fn surrogate_seed(&self) -> u64 {
        rng::derive_seed(self.seed, 12)
    }

    /// Base seed for evaluation runs.
    pub fn evaluation_seed(&self) -> u64 {
        rng::derive_seed(self.seed, 13)
    }

    pub fn confidence(&self) -> Confidence {
        Confidence {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn epsilon_bounds(&self) -> (f64, f64) {
        (self.epsilon_min, self.epsilon_max)
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig(m) => Error::InvalidConfig(format!("{section}: {m}")),
        other => other,
    }
}
