//! Experiment configuration files.
//!
//! One TOML file describes the data source, the estimators, shared fit
//! options and the parameters of every experiment protocol. Command-line
//! flags override individual fields through [`Overrides`].

use std::path::{Path, PathBuf};

use rumsim_core::distributions::ErrorDistribution;
use rumsim_core::estimation::{BatchMode, FitOptions, ModelSpec};
use rumsim_core::model::{CholeskySpec, LinearUtilitySpec, NonlinearUtilitySpec, UtilitySpec};
use rumsim_core::simulator::DrawMode;
use rumsim_core::synthdata::{Estimator, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::dataio::SchemaConfig;
use crate::error::{Error, Result};

/// Built-in configuration used when no file is given.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/exp1.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Prefix of every output file.
    pub experiment: String,
    /// Seeds the data generator, the initial parameters and the error draws.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub qsweep: QSweepConfig,
    #[serde(default)]
    pub lambdasweep: LambdaSweepConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// CSV file; relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    pub schema: SchemaConfig,
    /// Utility of the linear estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<LinearUtilitySpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RumNn,
    Mnl,
    BinaryProbit,
    PlainDnn,
    /// RUM-NN with standard normal errors and estimated correlations.
    MultinomialProbit,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RumNn => "rum_nn",
            ModelKind::Mnl => "mnl",
            ModelKind::BinaryProbit => "binary_probit",
            ModelKind::PlainDnn => "plain_dnn",
            ModelKind::MultinomialProbit => "multinomial_probit",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    #[default]
    Linear,
    Nonlinear,
}

/// A kernel given by name (`"gumbel"`) or with explicit hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ErrorChoice {
    Name(KernelName),
    Full(ErrorDistribution),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Gumbel,
    Normal,
    Exponential,
    Pareto,
}

impl ErrorChoice {
    pub fn distribution(self) -> ErrorDistribution {
        match self {
            ErrorChoice::Name(KernelName::Gumbel) => ErrorDistribution::gumbel(),
            ErrorChoice::Name(KernelName::Normal) => ErrorDistribution::normal(),
            ErrorChoice::Name(KernelName::Exponential) => ErrorDistribution::exponential(),
            ErrorChoice::Name(KernelName::Pareto) => ErrorDistribution::pareto(),
            ErrorChoice::Full(d) => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub model: ModelKind,
    /// Error kernel of `rum_nn`; Gumbel when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorChoice>,
    #[serde(default)]
    pub utility: UtilityKind,
    /// Hidden layer widths of nonlinear utilities and of `plain_dnn`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Attributes fed to each alternative's subnetwork.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Vec<String>>>,
    /// Estimate error correlations among the non-base alternatives.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub correlation: bool,
    #[serde(default, skip_serializing_if = "FitOverrides::is_empty")]
    pub fit: FitOverrides,
}

/// Per-estimator deviations from the shared fit options.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_lambda: Option<f64>,
}

impl FitOverrides {
    pub fn is_empty(&self) -> bool {
        *self == FitOverrides::default()
    }

    pub fn apply(&self, base: &FitOptions) -> FitOptions {
        let mut o = base.clone();
        if let Some(v) = self.learning_rate {
            o.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            o.epochs = v;
        }
        if let Some(v) = self.batch {
            o.batch = v;
        }
        if let Some(v) = self.q {
            o.simulator.q = v;
        }
        if let Some(v) = self.lambda {
            o.simulator.lambda = v;
        }
        if let Some(v) = self.eval_lambda {
            o.eval_lambda = Some(v);
        }
        o
    }
}

impl EstimatorConfig {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.model {
            ModelKind::RumNn => {
                let e = self.error.map_or(ErrorDistribution::gumbel(), ErrorChoice::distribution);
                format!("RUM-NN({}, {})", e.name(), self.utility_name())
            }
            ModelKind::Mnl => "MNL".into(),
            ModelKind::BinaryProbit => "BinaryProbit".into(),
            ModelKind::PlainDnn => "DNN".into(),
            ModelKind::MultinomialProbit => "MNP".into(),
        }
    }

    fn utility_name(&self) -> &'static str {
        match self.utility {
            UtilityKind::Linear => "linear",
            UtilityKind::Nonlinear => "nonlinear",
        }
    }

    /// Model specification given the linear utility of the data source.
    pub fn spec(&self, linear: Option<&LinearUtilitySpec>, alternatives: usize) -> Result<ModelSpec> {
        let need_linear = || {
            linear.cloned().ok_or_else(|| {
                Error::config(format!(
                    "estimator `{}` needs a linear utility; add `utility` to the dataset section",
                    self.label()
                ))
            })
        };
        let utility = || -> Result<UtilitySpec> {
            Ok(match self.utility {
                UtilityKind::Linear => UtilitySpec::Linear(need_linear()?),
                UtilityKind::Nonlinear => {
                    let mut n = NonlinearUtilitySpec::new(alternatives, self.hidden.clone().unwrap_or_else(|| vec![100, 100]));
                    n.alternative_inputs = self.inputs.clone();
                    UtilitySpec::Nonlinear(n)
                }
            })
        };
        let base = linear.map_or(alternatives - 1, |l| l.base_alternative);
        Ok(match self.model {
            ModelKind::RumNn => {
                let correlation = if self.correlation {
                    Some(CholeskySpec::new(alternatives, base)?)
                } else {
                    None
                };
                ModelSpec::RumNn {
                    utility: utility()?,
                    error: self.error.map_or(ErrorDistribution::gumbel(), ErrorChoice::distribution),
                    correlation,
                }
            }
            ModelKind::MultinomialProbit => ModelSpec::RumNn {
                utility: utility()?,
                error: ErrorDistribution::normal(),
                correlation: Some(CholeskySpec::new(alternatives, base)?),
            },
            ModelKind::Mnl => ModelSpec::Mnl { utility: need_linear()? },
            ModelKind::BinaryProbit => ModelSpec::BinaryProbit { utility: need_linear()? },
            ModelKind::PlainDnn => ModelSpec::PlainDnn {
                hidden: self.hidden.clone().unwrap_or_else(|| vec![100, 100]),
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Labels of the two estimators compared by t-test and TOST; the first two otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<[String; 2]>,
    /// TOST margin; 0.2 times the mean absolute estimate of each parameter otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

fn default_reps() -> usize {
    20
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            reps: default_reps(),
            compare: None,
            margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

fn default_folds() -> usize {
    5
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: default_folds(),
            compare: None,
            margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QSweepConfig {
    #[serde(default = "default_q_values")]
    pub q_values: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_timing_q")]
    pub timing_q_values: Vec<usize>,
    /// Epochs of each timed fit; the shared value otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_epochs: Option<usize>,
}

fn default_q_values() -> Vec<usize> {
    vec![10, 100, 500, 1000]
}

fn default_timing_q() -> Vec<usize> {
    vec![100, 1000, 3000, 5000, 10000]
}

impl Default for QSweepConfig {
    fn default() -> Self {
        QSweepConfig {
            q_values: default_q_values(),
            reps: default_reps(),
            timing_q_values: default_timing_q(),
            timing_epochs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSweepConfig {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_sweep_reps")]
    pub reps: usize,
}

fn default_lambdas() -> Vec<f64> {
    vec![1.0, 0.5, 0.1, 0.05, 0.01, 1e-3, 1e-4]
}

fn default_sweep_reps() -> usize {
    5
}

impl Default for LambdaSweepConfig {
    fn default() -> Self {
        LambdaSweepConfig {
            lambdas: default_lambdas(),
            reps: default_sweep_reps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Situations used for the check.
    #[serde(default = "default_gradcheck_n")]
    pub n: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Half-width of the uniform perturbation applied to the starting values.
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_gradcheck_n() -> usize {
    50
}

fn default_step() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-4
}

fn default_spread() -> f64 {
    0.5
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n: default_gradcheck_n(),
            step: default_step(),
            tolerance: default_tolerance(),
            spread: default_spread(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

/// Command-line values that replace configuration fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub q: Option<usize>,
    pub lambda: Option<f64>,
    pub draw_mode: Option<DrawMode>,
    /// Keep only estimators whose label or model name matches.
    pub model: Option<String>,
    pub reps: Option<usize>,
    pub folds: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a config; the top-level seed replaces the generator and fit seeds.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|source| Error::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.propagate_seed();
        Ok(cfg)
    }

    /// Read a config file, resolving the dataset path against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        if let Some(d) = &mut cfg.dataset {
            if d.path.is_relative() {
                if let Some(dir) = path.parent() {
                    d.path = dir.join(&d.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_CONFIG, Path::new("<builtin exp1>")).expect("built-in config parses")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    /// Apply command-line overrides and propagate the global seed.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(q) = o.q {
            self.fit.simulator.q = q;
            self.estimators.iter_mut().for_each(|e| e.fit.q = None);
        }
        if let Some(l) = o.lambda {
            self.fit.simulator.lambda = l;
            self.estimators.iter_mut().for_each(|e| e.fit.lambda = None);
        }
        if let Some(m) = o.draw_mode {
            self.fit.simulator.draw_mode = m;
        }
        if let Some(sel) = &o.model {
            let before = self.estimators.len();
            self.estimators.retain(|e| e.label() == *sel || e.model.name() == sel);
            if self.estimators.is_empty() && before > 0 {
                return Err(Error::config(format!("no estimator matches `--model {sel}`")));
            }
        }
        if let Some(r) = o.reps {
            self.montecarlo.reps = r;
            self.qsweep.reps = r;
            self.lambdasweep.reps = r;
        }
        if let Some(k) = o.folds {
            self.cv.folds = k;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        self.propagate_seed();
        Ok(())
    }

    fn propagate_seed(&mut self) {
        if let Some(s) = &mut self.synth {
            s.seed = self.seed;
        }
        self.fit.seed = self.seed;
        self.fit.simulator.seed = self.seed;
    }

    /// Check ranges and referenced files before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return Err(Error::config(format!("invalid experiment name `{}`", self.experiment)));
        }
        match (&self.synth, &self.dataset) {
            (Some(_), Some(_)) => return Err(Error::config("give either `synth` or `dataset`, not both")),
            (None, None) => return Err(Error::config("no data source: add a `synth` or `dataset` section")),
            (Some(s), None) => s.validate()?,
            (None, Some(d)) => {
                if !d.path.is_file() {
                    return Err(Error::config(format!("dataset file {} does not exist", d.path.display())));
                }
                d.schema.validate()?;
                if let Some(u) = &d.utility {
                    u.validate()?;
                    if u.alternatives != d.schema.alternatives.len() {
                        return Err(Error::config("dataset utility and schema disagree on the number of alternatives"));
                    }
                }
            }
        }
        if self.estimators.is_empty() {
            return Err(Error::config("no estimators configured"));
        }
        let j = self.alternatives();
        let linear = self.linear_utility();
        let mut labels = std::collections::BTreeSet::new();
        for e in &self.estimators {
            if !labels.insert(e.label()) {
                return Err(Error::config(format!("duplicate estimator label `{}`", e.label())));
            }
            e.spec(linear.as_ref(), j)?;
            e.fit.apply(&self.fit).validate(j)?;
            if let Some(ErrorChoice::Full(d)) = e.error {
                d.validate()?;
            }
        }
        self.fit.validate(j)?;
        if self.montecarlo.reps < 2 || self.qsweep.reps < 2 || self.lambdasweep.reps < 2 {
            return Err(Error::config("montecarlo, qsweep and lambdasweep need at least two replications"));
        }
        if self.cv.folds < 2 {
            return Err(Error::config("cross-validation needs at least two folds"));
        }
        if self.qsweep.q_values.is_empty() || self.qsweep.q_values.contains(&0) {
            return Err(Error::config("qsweep.q_values must be non-empty and positive"));
        }
        if self.qsweep.timing_q_values.len() < 2 || self.qsweep.timing_q_values.contains(&0) {
            return Err(Error::config("qsweep.timing_q_values needs at least two positive values"));
        }
        if self.lambdasweep.lambdas.is_empty() || self.lambdasweep.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::config("lambdasweep.lambdas must be non-empty and positive"));
        }
        let g = &self.gradcheck;
        if g.n == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) || !(g.spread >= 0.0) {
            return Err(Error::config("gradcheck fields must be positive"));
        }
        Ok(())
    }

    pub fn alternatives(&self) -> usize {
        match (&self.synth, &self.dataset) {
            (Some(s), _) => s.alternatives,
            (None, Some(d)) => d.schema.alternatives.len(),
            (None, None) => 0,
        }
    }

    /// Linear utility shared by the linear estimators.
    pub fn linear_utility(&self) -> Option<LinearUtilitySpec> {
        match (&self.synth, &self.dataset) {
            (Some(s), _) => Some(s.utility_spec()),
            (None, Some(d)) => d.utility.clone(),
            (None, None) => None,
        }
    }

    /// Resolved estimators with their own fit options.
    pub fn estimator_list(&self) -> Result<Vec<Estimator>> {
        let linear = self.linear_utility();
        let j = self.alternatives();
        self.estimators
            .iter()
            .map(|e| {
                Ok(Estimator {
                    label: e.label(),
                    spec: e.spec(linear.as_ref(), j)?,
                    options: Some(e.fit.apply(&self.fit)),
                })
            })
            .collect()
    }
}
