//! Run configuration: a flat key/value file (TOML syntax, no nesting) plus
//! `--set key=value` command-line overrides. One [`RunConfig`] fully
//! determines a run: solver method, trial form(s), material, network and
//! test-basis sizes, optimizer schedule, discretization resolutions, and
//! output location. Everything downstream (training drivers, FEM benchmark,
//! bound evaluation, run records) is constructed from it through the helper
//! methods here, so two processes given the same file and overrides build
//! identical problems.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::losses::Form;
use crate::material::{MaterialError, MaterialField, PhasePair};
use crate::network::{NetworkConfig, NetworkError};
use crate::par::Reduction;
use crate::quadrature::{CollocationGrid, QuadratureError};
use crate::test_bases::{BasisError, NetworkBasis, SpectralBasis, TestBasis};
use crate::train::TrainConfig;

/// Which solver a run uses.
///
/// * `pinn` — pointwise strong-form residual on a collocation grid
///   (needs the smoothed material).
/// * `vspinn` — integrated weak-form residual against the spectral test
///   family (closed-form diagonal Gram).
/// * `vnpinn` — integrated weak-form residual against a family of random
///   untrained networks (numeric Gram with a conditioning fallback).
/// * `fem` — the P1 finite-element benchmark; no training at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Pinn,
    Vspinn,
    Vnpinn,
    Fem,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodKind::Pinn => "pinn",
            MethodKind::Vspinn => "vspinn",
            MethodKind::Vnpinn => "vnpinn",
            MethodKind::Fem => "fem",
        };
        f.write_str(s)
    }
}

/// Which cell problem(s) to solve: the primal form, the dual (stream
/// function) form, or both in lockstep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormChoice {
    Primal,
    Dual,
    Both,
}

impl FormChoice {
    /// The concrete forms this choice covers, in a fixed order.
    pub fn forms(self) -> &'static [Form] {
        match self {
            FormChoice::Primal => &[Form::Primal],
            FormChoice::Dual => &[Form::Dual],
            FormChoice::Both => &[Form::Primal, Form::Dual],
        }
    }

    pub fn includes(self, form: Form) -> bool {
        self.forms().contains(&form)
    }
}

impl fmt::Display for FormChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormChoice::Primal => "primal",
            FormChoice::Dual => "dual",
            FormChoice::Both => "both",
        };
        f.write_str(s)
    }
}

/// Material description: the exact piecewise-constant coefficient, or its
/// smoothed variant with transition width `epsilon` (the strong form needs
/// the smoothed one; the weak forms and FEM accept either).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Piecewise,
    Smoothed,
}

impl fmt::Display for MaterialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaterialKind::Piecewise => "piecewise",
            MaterialKind::Smoothed => "smoothed",
        };
        f.write_str(s)
    }
}

/// Test-basis family for the weak methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Spectral,
    Network,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BasisKind::Spectral => "spectral",
            BasisKind::Network => "network",
        };
        f.write_str(s)
    }
}

/// Everything that goes wrong between a config file and a validated run
/// description.
#[derive(Debug)]
pub enum ConfigError {
    /// The file could not be read.
    Io(std::io::Error),
    /// The file or an override is not valid flat TOML for [`RunConfig`]
    /// (syntax error, unknown key, wrong value type).
    Parse(String),
    /// The values parse but describe an impossible run.
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e)
    }
}

impl From<MaterialError> for ConfigError {
    fn from(e: MaterialError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<NetworkError> for ConfigError {
    fn from(e: NetworkError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<QuadratureError> for ConfigError {
    fn from(e: QuadratureError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<BasisError> for ConfigError {
    fn from(e: BasisError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Complete description of one run. Flat on purpose: every key is a scalar,
/// so a config file is a plain list of `key = value` lines and any key can
/// be overridden from the command line as `--set key=value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Solver: `pinn`, `vspinn`, `vnpinn`, or `fem`.
    pub method: MethodKind,
    /// Which cell problem(s): `primal`, `dual`, or `both`.
    pub form: FormChoice,

    /// Material variant: `piecewise` or `smoothed`.
    pub material: MaterialKind,
    /// Transition width of the smoothed material (ignored for `piecewise`).
    pub epsilon: f64,
    /// Conductivity of the matrix phase.
    pub gamma_mat: f64,
    /// Conductivity of the inclusion phase.
    pub gamma_inc: f64,

    /// Periodic embedding features per coordinate of the trial network.
    pub n_periodic: usize,
    /// Hidden width of the trial network.
    pub n_hidden: usize,
    /// Number of hidden layers of the trial network.
    pub n_layers: usize,

    /// Test family for the weak methods: `spectral` or `network`.
    /// Fixed implicitly by the method (`vspinn` → spectral, `vnpinn` →
    /// network); kept as a key so records spell it out.
    pub test_basis: BasisKind,
    /// Spectral test family: largest mode index in x₁.
    pub spectral_m: usize,
    /// Spectral test family: largest mode index in x₂.
    pub spectral_n: usize,
    /// Network test family: number of members.
    pub n_test: usize,
    /// Network test family: seed for the random untrained members.
    pub test_seed: u64,
    /// Network test family: fall back from the full Gram to its diagonal
    /// when min-eigenvalue ≤ tau × max-eigenvalue.
    pub gram_fallback_tau: f64,
    /// Architecture of the network test members (periodic features).
    pub test_n_periodic: usize,
    /// Architecture of the network test members (hidden width).
    pub test_n_hidden: usize,
    /// Architecture of the network test members (hidden layers).
    pub test_n_layers: usize,

    /// Collocation grid resolution per axis (training and quick estimates).
    pub grid_n: usize,
    /// FEM mesh resolution per axis; must be divisible by 4 so element
    /// edges line up with the inclusion boundary.
    pub fem_n: usize,

    /// Optimizer steps.
    pub epochs: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Adam first-moment decay.
    pub adam_beta1: f64,
    /// Adam second-moment decay.
    pub adam_beta2: f64,
    /// Adam denominator offset.
    pub adam_eps: f64,
    /// Record the loss curve every this many epochs.
    pub log_every: usize,
    /// Seed for the trial-network initialization (the dual net, when both
    /// forms run, uses `seed + 1`).
    pub seed: u64,

    /// Force bit-reproducible reductions (fixed chunking, ordered
    /// combination) at a small speed cost.
    pub deterministic: bool,
    /// Directory that receives the run record and solution files.
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: MethodKind::Pinn,
            form: FormChoice::Both,
            material: MaterialKind::Smoothed,
            epsilon: 0.05,
            gamma_mat: 1.0,
            gamma_inc: 0.1,
            n_periodic: 5,
            n_hidden: 12,
            n_layers: 2,
            test_basis: BasisKind::Spectral,
            spectral_m: 5,
            spectral_n: 5,
            n_test: 70,
            test_seed: 7,
            gram_fallback_tau: 1e-10,
            test_n_periodic: 3,
            test_n_hidden: 8,
            test_n_layers: 1,
            grid_n: 128,
            fem_n: 128,
            epochs: 40_000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            log_every: 100,
            seed: 0,
            deterministic: true,
            out_dir: "runs/out".to_string(),
        }
    }
}

impl RunConfig {
    /// Parse a flat key/value file. Absent keys take their defaults;
    /// unknown keys are an error, not a warning.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    /// Read and parse a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Serialize back to the flat file format (round-trips through
    /// [`Self::from_toml_str`]).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat scalar struct always serializes")
    }

    /// Apply one `key=value` override. The value is parsed with TOML value
    /// syntax; a bare word that is not valid TOML (say a path with
    /// separators) falls back to being taken as a string literal. Unknown
    /// keys and type mismatches are errors.
    pub fn apply_set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::Parse(format!(
                "override '{assignment}' is not of the form key=value"
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(ConfigError::Parse(format!(
                "override '{assignment}' has an empty key"
            )));
        }
        // Route the override through the same deserializer as the file so
        // key names, value types, and enum spellings are checked once,
        // in one place.
        let line = match value.parse::<toml::Value>() {
            Ok(_) => format!("{key} = {value}"),
            Err(_) => format!("{key} = {}", toml::Value::String(value.to_string())),
        };
        let mut table: toml::Table = toml::from_str(&self.to_toml_string())
            .expect("own serialization always parses");
        let patch: toml::Table =
            toml::from_str(&line).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (k, v) in patch {
            table.insert(k, v);
        }
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(())
    }

    /// Check cross-field consistency. Called after parsing and overrides;
    /// the helper constructors below assume it has passed.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.phases()?;
        if self.material == MaterialKind::Smoothed && !(self.epsilon > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "smoothed material needs epsilon > 0, got {}",
                self.epsilon
            )));
        }
        if self.method == MethodKind::Pinn && self.material == MaterialKind::Piecewise {
            return Err(ConfigError::Invalid(
                "method pinn needs material = \"smoothed\": the pointwise residual \
                 differentiates the coefficient"
                    .to_string(),
            ));
        }
        if self.method != MethodKind::Fem {
            NetworkConfig::new(self.n_periodic, self.n_hidden, self.n_layers)?;
            if self.grid_n == 0 {
                return Err(ConfigError::Invalid("grid_n must be positive".to_string()));
            }
            if self.epochs == 0 {
                return Err(ConfigError::Invalid("epochs must be positive".to_string()));
            }
            if self.log_every == 0 {
                return Err(ConfigError::Invalid(
                    "log_every must be positive".to_string(),
                ));
            }
            if !(self.learning_rate > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "learning_rate must be positive, got {}",
                    self.learning_rate
                )));
            }
            for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(ConfigError::Invalid(format!(
                        "{name} must lie in [0, 1), got {b}"
                    )));
                }
            }
            if !(self.adam_eps > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "adam_eps must be positive, got {}",
                    self.adam_eps
                )));
            }
        }
        match self.method {
            MethodKind::Vspinn => {
                if self.test_basis != BasisKind::Spectral {
                    return Err(ConfigError::Invalid(
                        "method vspinn uses test_basis = \"spectral\"".to_string(),
                    ));
                }
                if self.spectral_m == 0 && self.spectral_n == 0 {
                    return Err(ConfigError::Invalid(
                        "spectral test family needs spectral_m > 0 or spectral_n > 0".to_string(),
                    ));
                }
            }
            MethodKind::Vnpinn => {
                if self.test_basis != BasisKind::Network {
                    return Err(ConfigError::Invalid(
                        "method vnpinn uses test_basis = \"network\"".to_string(),
                    ));
                }
                if self.n_test == 0 {
                    return Err(ConfigError::Invalid(
                        "network test family needs n_test > 0".to_string(),
                    ));
                }
                NetworkConfig::new(self.test_n_periodic, self.test_n_hidden, self.test_n_layers)?;
                if !(self.gram_fallback_tau >= 0.0) {
                    return Err(ConfigError::Invalid(format!(
                        "gram_fallback_tau must be non-negative, got {}",
                        self.gram_fallback_tau
                    )));
                }
            }
            MethodKind::Pinn | MethodKind::Fem => {}
        }
        if self.fem_n == 0 || self.fem_n % 4 != 0 {
            return Err(ConfigError::Invalid(format!(
                "fem_n must be a positive multiple of 4 so element edges meet the \
                 inclusion boundary, got {}",
                self.fem_n
            )));
        }
        Ok(())
    }

    /// The two phase conductivities, checked positive.
    pub fn phases(&self) -> Result<PhasePair, ConfigError> {
        Ok(PhasePair::new(self.gamma_mat, self.gamma_inc)?)
    }

    /// The coefficient field this run trains against.
    pub fn material_field(&self) -> Result<MaterialField, ConfigError> {
        let phases = self.phases()?;
        Ok(match self.material {
            MaterialKind::Piecewise => MaterialField::piecewise(phases),
            MaterialKind::Smoothed => MaterialField::smoothed(phases, self.epsilon)?,
        })
    }

    /// Trial-network architecture.
    pub fn network_config(&self) -> Result<NetworkConfig, ConfigError> {
        Ok(NetworkConfig::new(self.n_periodic, self.n_hidden, self.n_layers)?)
    }

    /// Architecture of the random network test members (`vnpinn`).
    pub fn test_network_config(&self) -> Result<NetworkConfig, ConfigError> {
        Ok(NetworkConfig::new(
            self.test_n_periodic,
            self.test_n_hidden,
            self.test_n_layers,
        )?)
    }

    /// Collocation grid for training and quick estimates.
    pub fn grid(&self) -> Result<CollocationGrid, ConfigError> {
        Ok(CollocationGrid::new(self.grid_n)?)
    }

    /// The test family for the configured weak method. `None` for the
    /// methods that do not use one.
    pub fn basis(&self) -> Result<Option<TestBasis>, ConfigError> {
        match self.method {
            MethodKind::Vspinn => Ok(Some(TestBasis::Spectral(SpectralBasis::new(
                self.spectral_m,
                self.spectral_n,
            )?))),
            MethodKind::Vnpinn => Ok(Some(TestBasis::Network(NetworkBasis::new(
                self.test_network_config()?,
                self.n_test,
                self.test_seed,
            )?))),
            MethodKind::Pinn | MethodKind::Fem => Ok(None),
        }
    }

    /// Optimizer schedule plus the reduction mode implied by
    /// `deterministic`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            log_every: self.log_every,
            reduction: self.reduction(),
        }
    }

    pub fn reduction(&self) -> Reduction {
        if self.deterministic {
            Reduction::Ordered
        } else {
            Reduction::Fastest
        }
    }
}
