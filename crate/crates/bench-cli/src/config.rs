//! Experiment configuration (TOML, schema version 1).

use std::path::{Path, PathBuf};

use carleman_core::learn::{LearningConfig, Quadrature};
use carleman_core::sparse::AdmmConfig;
use carleman_core::structured::StructuredConfig;
use carleman_core::{Execution, ExcitationSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub mode: Mode,
    /// Seeds the exploration signal.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningSection>,
    pub simulation: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<SparseSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OnPolicy,
    OffPolicy,
    Structured,
    Sparse,
    HjbBaseline,
    OpenLoop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OnPolicy => "on-policy",
            Mode::OffPolicy => "off-policy",
            Mode::Structured => "structured",
            Mode::Sparse => "sparse",
            Mode::HjbBaseline => "hjb-baseline",
            Mode::OpenLoop => "open-loop",
        }
    }

    fn learns(self) -> bool {
        !matches!(self, Mode::HjbBaseline | Mode::OpenLoop)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantConfig {
    /// Polynomial oscillator with a state-dependent input gain.
    Oscillator,
    /// Tugboat fleet with exact kinematics; states are relative to the
    /// formation targets.
    Tugboat { boats: usize },
    /// `ẋ = Ax + Bu`, matrices given row by row.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

impl PlantConfig {
    pub fn n(&self) -> usize {
        match self {
            PlantConfig::Oscillator => 2,
            PlantConfig::Tugboat { boats } => boats * carleman_core::plant::TUG_STATES,
            PlantConfig::Linear { a, .. } => a.len(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            PlantConfig::Oscillator => 1,
            PlantConfig::Tugboat { boats } => boats * carleman_core::plant::TUG_INPUTS,
            PlantConfig::Linear { b, .. } => b.first().map_or(0, Vec::len),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PlantConfig::Oscillator => "oscillator",
            PlantConfig::Tugboat { .. } => "tugboat",
            PlantConfig::Linear { .. } => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Truncation order `N`.
    pub order: usize,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// Cost weights. Missing matrices fall back to the plant defaults
/// (identity for linear plants). `q_scale` multiplies `Q1` for the learner
/// only; reported costs always use the unscaled weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub q_scale: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            q1: None,
            r: None,
            q_scale: 1.0,
        }
    }
}

/// Exploration signal; the seed comes from the top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    None,
    SumOfSinusoids {
        amplitude: f64,
        count: usize,
        min_freq: f64,
        max_freq: f64,
    },
    AlternatingPulse {
        amplitude: f64,
        period: f64,
        jitter: f64,
    },
}

impl NoiseConfig {
    pub fn spec(&self, seed: u64) -> ExcitationSpec {
        match *self {
            NoiseConfig::None => ExcitationSpec::None,
            NoiseConfig::SumOfSinusoids {
                amplitude,
                count,
                min_freq,
                max_freq,
            } => ExcitationSpec::SumOfSinusoids {
                amplitude,
                count,
                min_freq,
                max_freq,
                seed,
            },
            NoiseConfig::AlternatingPulse {
                amplitude,
                period,
                jitter,
            } => ExcitationSpec::AlternatingPulse {
                amplitude,
                period,
                jitter,
                seed,
            },
        }
    }
}

fn default_substeps() -> usize {
    1
}
fn default_max_iters() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    pub update_interval: f64,
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub quadrature: Quadrature,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "default_true")]
    pub require_convergence: bool,
    #[serde(default)]
    pub execution: Execution,
    /// State the learning data starts from; defaults to the simulation's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    pub noise: NoiseConfig,
}

impl LearningSection {
    pub fn to_core(&self, seed: u64) -> LearningConfig {
        LearningConfig {
            update_interval: self.update_interval,
            dt: self.dt,
            substeps: self.substeps,
            quadrature: self.quadrature,
            max_iters: self.max_iters,
            tol: self.tol,
            ridge: self.ridge,
            noise: self.noise.spec(seed),
            require_convergence: self.require_convergence,
            execution: self.execution,
        }
    }
}

/// Closed-loop evaluation run; `J` is taken over `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub initial_state: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    OnPolicy,
    #[default]
    OffPolicy,
    ModelBased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredSection {
    /// Agent pairs that may not exchange states, numbered from 1.
    #[serde(default)]
    pub removed_links: Vec<[usize; 2]>,
    #[serde(default)]
    pub learner: Learner,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_structured_iters")]
    pub max_iters: usize,
}

fn default_structured_iters() -> usize {
    StructuredConfig::default().max_iters
}

impl StructuredSection {
    pub fn to_core(&self) -> StructuredConfig {
        StructuredConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            ..StructuredConfig::default()
        }
    }

    /// Zero-based agent pairs.
    pub fn links(&self) -> Vec<(usize, usize)> {
        self.removed_links.iter().map(|[a, b]| (a.wrapping_sub(1), b.wrapping_sub(1))).collect()
    }
}

fn default_capacity() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseSection {
    pub gamma: f64,
    #[serde(default)]
    pub learner: Learner,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_eps")]
    pub eps_k: f64,
    #[serde(default = "default_eps")]
    pub eps_l: f64,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default)]
    pub reweight: bool,
    /// States a link can carry before it counts as over capacity.
    #[serde(default = "default_capacity")]
    pub per_link_capacity: usize,
}

fn default_rho0() -> f64 {
    AdmmConfig::new(0.0).rho0
}
fn default_alpha() -> f64 {
    AdmmConfig::new(0.0).alpha
}
fn default_eps() -> f64 {
    AdmmConfig::new(0.0).eps_k
}
fn default_max_inner() -> usize {
    AdmmConfig::new(0.0).max_inner
}

impl SparseSection {
    pub fn to_core(&self) -> AdmmConfig {
        AdmmConfig {
            gamma: self.gamma,
            rho0: self.rho0,
            alpha: self.alpha,
            weights: None,
            eps_k: self.eps_k,
            eps_l: self.eps_l,
            max_inner: self.max_inner,
            reweight: self.reweight,
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

pub(crate) fn matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>, UsageError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return usage(format!("{path}: expected a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn check_len(v: &[f64], n: usize, path: &str) -> Result<(), UsageError> {
    if v.len() != n {
        return usage(format!("{path}: expected {n} entries, got {}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return usage(format!("{path}: entries must be finite"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, UsageError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, UsageError> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            UsageError(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    pub fn order(&self) -> usize {
        self.model.as_ref().map_or(1, |m| m.order)
    }

    /// Semantic checks that serde cannot express.
    pub fn validate(&self) -> Result<(), UsageError> {
        if self.schema_version != SCHEMA_VERSION {
            return usage(format!(
                "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return usage("name: must be a non-empty plain file name");
        }
        let n = self.plant.n();
        let k = self.plant.k();
        match &self.plant {
            PlantConfig::Tugboat { boats } if *boats == 0 => return usage("plant.boats: must be at least 1"),
            PlantConfig::Linear { a, b } => {
                let a = matrix(a, "plant.a")?;
                let b = matrix(b, "plant.b")?;
                if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
                    return usage("plant: A must be square and B must have as many rows as A");
                }
            }
            _ => {}
        }
        if let Some(q1) = &self.cost.q1 {
            let q1 = matrix(q1, "cost.q1")?;
            if q1.shape() != (n, n) {
                return usage(format!("cost.q1: expected {n}x{n}"));
            }
        }
        if let Some(r) = &self.cost.r {
            let r = matrix(r, "cost.r")?;
            if r.shape() != (k, k) {
                return usage(format!("cost.r: expected {k}x{k}"));
            }
        }
        if !(self.cost.q_scale > 0.0) {
            return usage("cost.q_scale: must be positive");
        }
        check_len(&self.simulation.initial_state, n, "simulation.initial_state")?;
        if !(self.simulation.horizon > 0.0 && self.simulation.dt > 0.0) || self.simulation.substeps == 0 {
            return usage("simulation: horizon, dt and substeps must be positive");
        }
        if self.mode.learns() {
            let Some(model) = &self.model else {
                return usage(format!("model: required for mode {}", self.mode.as_str()));
            };
            let max_order = if matches!(self.plant, PlantConfig::Tugboat { .. }) { 3 } else { 4 };
            if !(1..=max_order).contains(&model.order) {
                return usage(format!("model.order: must be in 1..={max_order}"));
            }
            let needs_data = match self.mode {
                Mode::Structured => self.structured.as_ref().is_none_or(|s| s.learner != Learner::ModelBased),
                _ => true,
            };
            match (&self.learning, needs_data) {
                (None, true) => return usage(format!("learning: required for mode {}", self.mode.as_str())),
                (Some(l), _) => {
                    if let Some(x) = &l.initial_state {
                        check_len(x, n, "learning.initial_state")?;
                    }
                }
                _ => {}
            }
        }
        match self.mode {
            Mode::Structured => {
                let Some(s) = &self.structured else {
                    return usage("structured: required for mode structured");
                };
                let agents = self.agents();
                for [a, b] in &s.removed_links {
                    if *a == 0 || *b == 0 || a > &agents || b > &agents || a == b {
                        return usage(format!(
                            "structured.removed_links: ({a}, {b}) is not a pair of distinct agents in 1..={agents}"
                        ));
                    }
                }
            }
            Mode::Sparse => {
                let Some(s) = &self.sparse else {
                    return usage("sparse: required for mode sparse");
                };
                if s.learner == Learner::ModelBased {
                    return usage("sparse.learner: sparse synthesis learns from data (on-policy or off-policy)");
                }
            }
            Mode::HjbBaseline if self.plant != PlantConfig::Oscillator => {
                return usage("mode: the HJB baseline is only known in closed form for the oscillator");
            }
            _ => {}
        }
        Ok(())
    }

    /// Agents for link masks and bandwidth; one per boat, otherwise one.
    pub fn agents(&self) -> usize {
        match self.plant {
            PlantConfig::Tugboat { boats } => boats,
            _ => 1,
        }
    }
}
