//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! trials = 5
//! sample_budget = 200000
//! output_dir = "out"
//!
//! [problem]
//! kind = "synthetic"          # or "dro"
//! p = 5
//! d = 20
//! mu = 0.5
//! noise = "student_t:2.5"     # gaussian | student_t:DOF | pareto:TAIL | none
//! sigma0 = 0.01
//! sigma1 = 0.01
//!
//! [solver]
//! name = "rrosc"              # mscg | rmscg | rmscg_robust | rrosc
//! delta = 0.05
//! batch = 8
//! ```
//!
//! A `dro` problem reads `dataset` (LIBSVM) or builds one from a `[problem.generate]`
//! table, then corrupts labels with the `noise` list (default: the six
//! Pareto, Student-t and sparse settings). With `[selection] enabled = true`,
//! `reg_weight` and `eta` are picked by validation MSE over `reg_grid` and
//! `eta_grid`, each defaulting to `{1e-5, ..., 1e5}`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use robcomp_core::noise::{NoiseKind, TailFamily};
use robcomp_core::Regularizer;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

pub const DEFAULT_CHECKPOINTS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub sample_budget: u64,
    /// Number of log-spaced sample checkpoints.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    pub output_dir: PathBuf,
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
}

fn default_trials() -> usize {
    1
}

fn default_checkpoints() -> usize {
    DEFAULT_CHECKPOINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Synthetic(SyntheticConfig),
    Dro(DroConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub p: usize,
    pub d: usize,
    pub mu: f64,
    #[serde(default)]
    pub noise: TailSpec,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default)]
    pub sigma1: f64,
    /// Fixes the problem instance across trials; otherwise each trial draws
    /// its own from the trial seed.
    #[serde(default)]
    pub instance_seed: Option<u64>,
}

/// Oracle noise family for synthetic problems.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TailSpec {
    #[default]
    None,
    Gaussian,
    StudentT(f64),
    Pareto(f64),
}

impl TailSpec {
    pub fn family(self) -> Option<TailFamily> {
        match self {
            TailSpec::None => None,
            TailSpec::Gaussian => Some(TailFamily::Gaussian),
            TailSpec::StudentT(dof) => Some(TailFamily::StudentT { dof }),
            TailSpec::Pareto(tail) => Some(TailFamily::Pareto { tail }),
        }
    }
}

fn parse_param(kind: &str, param: Option<&str>) -> std::result::Result<f64, String> {
    let p = param.ok_or_else(|| format!("{kind} needs a parameter, as in {kind}:2.5"))?;
    p.parse::<f64>().map_err(|_| format!("bad {kind} parameter {p:?}"))
}

impl FromStr for TailSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        match kind {
            "none" => Ok(TailSpec::None),
            "gaussian" => Ok(TailSpec::Gaussian),
            "student_t" => Ok(TailSpec::StudentT(parse_param(kind, param)?)),
            "pareto" => Ok(TailSpec::Pareto(parse_param(kind, param)?)),
            _ => Err(format!("unknown noise family {kind:?}")),
        }
    }
}

impl fmt::Display for TailSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailSpec::None => write!(f, "none"),
            TailSpec::Gaussian => write!(f, "gaussian"),
            TailSpec::StudentT(v) => write!(f, "student_t:{v}"),
            TailSpec::Pareto(v) => write!(f, "pareto:{v}"),
        }
    }
}

/// Label corruption for one DRO source, written `pareto:TAIL`,
/// `student_t:DOF` or `sparse:BETA[:FRACTION[:SIGMA]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelNoise(pub NoiseKind);

impl FromStr for LabelNoise {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| format!("bad number {p:?} in {s:?}")))
            .collect::<std::result::Result<_, _>>()?;
        let want = |lo: usize, hi: usize| {
            if nums.len() < lo || nums.len() > hi {
                Err(format!("{s:?}: expected {lo} to {hi} parameters"))
            } else {
                Ok(())
            }
        };
        let kind = match kind {
            "pareto" => {
                want(1, 1)?;
                NoiseKind::pareto(nums[0])
            }
            "student_t" => {
                want(1, 1)?;
                NoiseKind::student_t(nums[0])
            }
            "sparse" => {
                want(1, 3)?;
                let NoiseKind::Sparse { fraction, gaussian_sigma, .. } = NoiseKind::sparse(nums[0]) else {
                    unreachable!()
                };
                NoiseKind::Sparse {
                    beta: nums[0],
                    fraction: nums.get(1).copied().unwrap_or(fraction),
                    gaussian_sigma: nums.get(2).copied().unwrap_or(gaussian_sigma),
                }
            }
            _ => return Err(format!("unknown label noise {kind:?}")),
        };
        Ok(LabelNoise(kind))
    }
}

impl fmt::Display for LabelNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            NoiseKind::Pareto { tail } => write!(f, "pareto:{tail}"),
            NoiseKind::StudentT { dof } => write!(f, "student_t:{dof}"),
            NoiseKind::Sparse {
                beta,
                fraction,
                gaussian_sigma,
            } => write!(f, "sparse:{beta}:{fraction}:{gaussian_sigma}"),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(TailSpec);
string_serde!(LabelNoise);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    #[default]
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroConfig {
    /// LIBSVM training file (plain or gzip).
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Optional held-out file; the `mse` column uses it when present.
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub regularizer: RegKind,
    #[serde(default)]
    pub reg_weight: f64,
    #[serde(default = "default_label_noise")]
    pub noise: Vec<LabelNoise>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Quadratic-growth constant assumed for the schedule.
    #[serde(default = "default_dro_mu")]
    pub mu: f64,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_label_noise() -> Vec<LabelNoise> {
    NoiseKind::six_settings().into_iter().map(LabelNoise).collect()
}

fn default_validation_fraction() -> f64 {
    0.1
}

fn default_dro_mu() -> f64 {
    1e-3
}

impl DroConfig {
    pub fn regularizer(&self, weight: f64) -> Result<Regularizer> {
        let r = match self.regularizer {
            RegKind::None => Ok(Regularizer::None),
            RegKind::L1 => Regularizer::l1(weight),
            RegKind::L2 => Regularizer::l2(weight),
        };
        Ok(r?)
    }
}

/// Synthetic sparse regression data for a DRO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub examples: usize,
    pub dim: usize,
    #[serde(default)]
    pub density: Option<f64>,
    #[serde(default)]
    pub support: Option<usize>,
    #[serde(default)]
    pub label_sigma: Option<f64>,
    /// Held-out clean examples drawn from the same model.
    #[serde(default)]
    pub test_examples: usize,
    /// Data seed; defaults to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    Mscg,
    Rmscg,
    RmscgRobust,
    Rrosc,
}

impl fmt::Display for SolverName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolverName::Mscg => "mscg",
            SolverName::Rmscg => "rmscg",
            SolverName::RmscgRobust => "rmscg_robust",
            SolverName::Rrosc => "rrosc",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub name: SolverName,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Mini-batch size; the initial batch for restarted MSCG.
    #[serde(default)]
    pub batch: Option<usize>,
    /// Step size (first-stage step for geometric schedules).
    #[serde(default)]
    pub eta: Option<f64>,
    /// Iterations per stage (first stage for geometric schedules).
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub stages: Option<usize>,
    /// Reference batch multiplier: `b = ceil(18 c ln(1/δ))`.
    #[serde(default = "default_c")]
    pub c: usize,
    /// Ball radius for geometric schedules.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub reference_batch: Option<usize>,
    #[serde(default)]
    pub split_batches: bool,
}

fn default_delta() -> f64 {
    0.05
}

fn default_c() -> usize {
    1
}

fn default_radius() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default)]
    pub enabled: bool,
    pub reg_grid: Option<Vec<f64>>,
    pub eta_grid: Option<Vec<f64>>,
}

impl SelectionConfig {
    /// Regularization weights to try; just `fixed` without a regularizer.
    pub fn reg_candidates(&self, regularizer: RegKind, fixed: f64) -> Vec<f64> {
        match (&self.reg_grid, regularizer) {
            (_, RegKind::None) => vec![fixed],
            (Some(g), _) => g.clone(),
            (None, _) => default_grid(),
        }
    }

    pub fn eta_candidates(&self) -> Vec<f64> {
        self.eta_grid.clone().unwrap_or_else(default_grid)
    }
}

/// `{1e-5, 1e-4, ..., 1e5}`.
pub fn default_grid() -> Vec<f64> {
    (-5..=5).map(|k| 10f64.powi(k)).collect()
}

fn on_default_grid(v: f64) -> bool {
    default_grid().iter().any(|g| (v - g).abs() <= 1e-12 * g)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Usage(m));
        if self.trials < 1 {
            return bad("trials must be >= 1".into());
        }
        if self.sample_budget < 1 {
            return bad("sample_budget must be >= 1".into());
        }
        if self.checkpoints < 1 {
            return bad("checkpoints must be >= 1".into());
        }
        let s = &self.solver;
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", s.delta));
        }
        if s.batch == Some(0) || s.iterations == Some(0) || s.stages == Some(0) || s.reference_batch == Some(0) {
            return bad("batch, iterations, stages and reference_batch must be >= 1".into());
        }
        if s.eta.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
            return bad("eta must be > 0".into());
        }
        if s.c < 1 || !(s.radius > 0.0 && s.radius.is_finite()) {
            return bad("c must be >= 1 and radius > 0".into());
        }
        for (name, grid) in [("reg_grid", &self.selection.reg_grid), ("eta_grid", &self.selection.eta_grid)] {
            let Some(grid) = grid else { continue };
            if grid.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
            if let Some(v) = grid.iter().find(|v| !on_default_grid(**v)) {
                return bad(format!("{name} value {v} is not a power of ten in [1e-5, 1e5]"));
            }
        }
        match &self.problem {
            ProblemConfig::Synthetic(p) => {
                if self.selection.enabled {
                    return bad("model selection needs a dro problem".into());
                }
                if p.p == 0 || p.d == 0 || !(p.mu > 0.0) {
                    return bad("synthetic problem needs p, d >= 1 and mu > 0".into());
                }
                if !(p.sigma0 >= 0.0 && p.sigma1 >= 0.0) {
                    return bad("noise scales must be >= 0".into());
                }
            }
            ProblemConfig::Dro(p) => {
                if p.dataset.is_some() == p.generate.is_some() {
                    return bad("dro problem needs exactly one of dataset or [problem.generate]".into());
                }
                if p.noise.len() < 2 {
                    return bad("dro problem needs at least two label noise settings".into());
                }
                if !(p.validation_fraction > 0.0 && p.validation_fraction < 1.0) {
                    return bad("validation_fraction must lie in (0, 1)".into());
                }
                if !(p.temperature > 0.0) || !(p.mu > 0.0) {
                    return bad("temperature and mu must be > 0".into());
                }
                if self.selection.reg_grid.is_some() && p.regularizer == RegKind::None {
                    return bad("reg_grid needs a regularizer".into());
                }
                p.regularizer(p.reg_weight)?;
            }
        }
        Ok(())
    }
}
