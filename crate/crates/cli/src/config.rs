//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use mixedpo::cases;
use mixedpo::polgrad::{CostForm, OptimizerConfig, Stepsize, UpdateKind};
use mixedpo::zeroth::{EstimatorMode, Variant};
use mixedpo::{Mat, Plant, TimeDomain};
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    Case1,
    Case2,
    Case3,
    NonconvexDiscrete,
    NonconvexContinuous,
    Nocoercivity1d,
    Custom,
}

impl CaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::Case1 => "case1",
            CaseName::Case2 => "case2",
            CaseName::Case3 => "case3",
            CaseName::NonconvexDiscrete => "nonconvex_discrete",
            CaseName::NonconvexContinuous => "nonconvex_continuous",
            CaseName::Nocoercivity1d => "nocoercivity_1d",
            CaseName::Custom => "custom",
        }
    }
}

/// A matrix written as rows, a scalar for 1×1 gains, or a built-in gain name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    #[serde(default = "default_kind")]
    pub kind: UpdateKind,
    #[serde(default = "default_eta")]
    pub eta: EtaSpec,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_cost_form")]
    pub cost_form: CostForm,
    #[serde(default = "default_hinf_every")]
    pub hinf_every: usize,
    #[serde(default)]
    pub freeze_theorem_stepsize: bool,
    #[serde(default)]
    pub backtracking: bool,
    /// Distance to the computed optimum counted as reaching it.
    #[serde(default = "default_optimum_tol")]
    pub optimum_tol: f64,
}

fn default_kind() -> UpdateKind {
    UpdateKind::NaturalGradient
}
fn default_eta() -> EtaSpec {
    EtaSpec::Named("theorem".into())
}
fn default_max_iter() -> usize {
    10_000
}
fn default_tol() -> f64 {
    1e-12
}
fn default_cost_form() -> CostForm {
    CostForm::J1Trace
}
fn default_hinf_every() -> usize {
    1
}
fn default_optimum_tol() -> f64 {
    1e-4
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        toml::from_str("").expect("empty algorithm section")
    }
}

impl AlgorithmSection {
    pub fn optimizer(&self) -> Result<OptimizerConfig, ConfigError> {
        let stepsize = match &self.eta {
            EtaSpec::Fixed(eta) if *eta > 0.0 && eta.is_finite() => Stepsize::Fixed(*eta),
            EtaSpec::Fixed(eta) => {
                return err(format!("algorithm.eta must be positive, got {eta}"))
            }
            EtaSpec::Named(name) if name == "theorem" => Stepsize::Theorem,
            EtaSpec::Named(name) => {
                return err(format!(
                    "algorithm.eta must be a number or \"theorem\", got {name:?}"
                ))
            }
        };
        if self.tol.is_nan() || self.tol < 0.0 {
            return err("algorithm.tol must be nonnegative");
        }
        let mut cfg = OptimizerConfig::new(self.kind, stepsize);
        cfg.max_iter = self.max_iter;
        cfg.tol = self.tol;
        cfg.cost_form = self.cost_form;
        cfg.hinf_every = self.hinf_every;
        cfg.freeze_theorem_stepsize = self.freeze_theorem_stepsize;
        cfg.backtracking = self.backtracking;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub k0: Option<GainSpec>,
    pub box_half_width: Option<f64>,
    /// Sets `γ = (1+slack)·‖T(K0)‖_∞` for each drawn `K0`.
    pub gamma_slack: Option<f64>,
    pub max_tries: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub d: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<Vec<f64>>>,
    pub e: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFreeSection {
    #[serde(default = "default_mode")]
    pub mode: EstimatorMode,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_m_traj")]
    pub m_traj: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_n_outer")]
    pub n_outer: usize,
    #[serde(default = "default_n_inner")]
    pub n_inner: usize,
    #[serde(default = "default_step")]
    pub eta: f64,
    #[serde(default = "default_step")]
    pub alpha: f64,
    /// Distance to the game's `K*` counted as converged.
    #[serde(default = "default_mf_tol")]
    pub tol: f64,
    pub k0: Option<GainSpec>,
    pub init_cov: Option<Vec<Vec<f64>>>,
}

fn default_mode() -> EstimatorMode {
    EstimatorMode::ExactGradient
}
fn default_variant() -> Variant {
    Variant::NaturalGradient
}
fn default_m_traj() -> usize {
    200
}
fn default_horizon() -> usize {
    100
}
fn default_radius() -> f64 {
    0.05
}
fn default_n_outer() -> usize {
    500
}
fn default_n_inner() -> usize {
    100
}
fn default_step() -> f64 {
    0.1
}
fn default_mf_tol() -> f64 {
    1e-3
}

impl Default for ModelFreeSection {
    fn default() -> Self {
        toml::from_str("").expect("empty modelfree section")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseName,
    pub time_domain: Option<TimeDomain>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub output_path: Option<PathBuf>,
    pub gamma: Option<f64>,
    /// Gain examined by `hinf` and `membership`.
    pub gain: Option<GainSpec>,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub init: InitSection,
    pub custom: Option<CustomSection>,
    #[serde(default)]
    pub modelfree: ModelFreeSection,
}

fn default_trials() -> usize {
    1
}

pub fn matrix(rows: &[Vec<f64>], name: &str) -> Result<Mat, ConfigError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return err(format!("{name} must be a nonempty matrix"));
    }
    if rows.iter().any(|r| r.len() != m) {
        return err(format!("{name} has rows of different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return err(format!("{name} has non-finite entries"));
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return err(format!("gamma must be positive, got {g}"));
            }
        }
        match (self.case, &self.custom) {
            (CaseName::Custom, None) => err("case = \"custom\" requires a [custom] section"),
            (CaseName::Custom, Some(_)) if self.time_domain.is_none() => {
                err("case = \"custom\" requires time_domain")
            }
            (CaseName::Custom, Some(_)) if self.gamma.is_none() => {
                err("case = \"custom\" requires gamma")
            }
            (case, Some(_)) if case != CaseName::Custom => err(format!(
                "built-in case {} accepts no matrix overrides (only gamma)",
                case.as_str()
            )),
            _ => Ok(()),
        }?;
        if let Some(domain) = self.time_domain {
            if let Some(&(_, builtin)) = cases::CASE_NAMES
                .iter()
                .find(|(n, _)| *n == self.case.as_str())
            {
                if builtin != domain {
                    return err(format!("{} is a {builtin}-time case", self.case.as_str()));
                }
            }
        }
        if self.trials == 0 {
            return err("trials must be positive");
        }
        Ok(())
    }

    pub fn domain(&self) -> TimeDomain {
        self.time_domain.unwrap_or_else(|| {
            cases::CASE_NAMES
                .iter()
                .find(|(n, _)| *n == self.case.as_str())
                .map_or(TimeDomain::Discrete, |c| c.1)
        })
    }

    /// Plant with the configured `γ`; Case 1 without one gets a placeholder
    /// that [`crate::commands`] replaces from the initial gain.
    pub fn plant(&self) -> Result<Plant, ConfigError> {
        let plant = match self.case {
            CaseName::Custom => self.custom_plant()?,
            case => cases::by_name(case.as_str()).expect("built-in case").0,
        };
        match self.gamma {
            Some(g) => plant.with_gamma(g).map_err(|e| ConfigError(e.to_string())),
            None => Ok(plant),
        }
    }

    fn custom_plant(&self) -> Result<Plant, ConfigError> {
        let c = self.custom.as_ref().expect("validated");
        let need = |m: &Option<Vec<Vec<f64>>>, name: &str| match m {
            Some(rows) => matrix(rows, name),
            None => err(format!("custom.{name} is required")),
        };
        let (a, b, d) = (need(&c.a, "a")?, need(&c.b, "b")?, need(&c.d, "d")?);
        let gamma = self.gamma.expect("validated");
        let plant = match (&c.q, &c.r, &c.c, &c.e) {
            (Some(_), Some(_), None, None) => {
                Plant::from_weights(a, b, d, need(&c.q, "q")?, need(&c.r, "r")?, gamma)
            }
            (None, None, Some(_), Some(_)) => {
                Plant::new(a, b, need(&c.c, "c")?, d, need(&c.e, "e")?, gamma)
            }
            _ => return err("custom needs either q and r, or c and e"),
        };
        plant.map_err(|e| ConfigError(format!("custom plant: {e}")))
    }

    /// Resolves a gain given as rows, a scalar, or one of `k1`, `k2`, `k3`.
    pub fn resolve_gain(&self, spec: &GainSpec, plant: &Plant) -> Result<Mat, ConfigError> {
        let k = match spec {
            GainSpec::Scalar(v) => Mat::from_element(1, 1, *v),
            GainSpec::Rows(rows) => matrix(rows, "gain")?,
            GainSpec::Named(name) => {
                let gains = match self.case {
                    CaseName::NonconvexDiscrete => cases::nonconvex_discrete_gains(),
                    CaseName::NonconvexContinuous => cases::nonconvex_continuous_gains(),
                    CaseName::Nocoercivity1d if name == "k" => {
                        return Ok(Mat::from_element(1, 1, cases::NOCOERCIVITY_GAIN))
                    }
                    _ => return err(format!("case {} has no named gains", self.case.as_str())),
                };
                match name.as_str() {
                    "k1" => gains.0,
                    "k2" => gains.1,
                    "k3" => gains.2,
                    _ => return err(format!("unknown gain name {name:?} (k1, k2, k3)")),
                }
            }
        };
        if k.shape() != (plant.n_inputs(), plant.n_states()) {
            return err(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                plant.n_inputs(),
                plant.n_states()
            ));
        }
        Ok(k)
    }

    pub fn gain(&self, plant: &Plant) -> Result<Mat, ConfigError> {
        match &self.gain {
            Some(spec) => self.resolve_gain(spec, plant),
            None => err("this command needs a gain"),
        }
    }
}
