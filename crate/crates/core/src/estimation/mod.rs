//! Simulated maximum likelihood: losses, gradients, Adam fitting and metrics.

mod adam;
mod objective;

pub use adam::Adam;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::network::Mlp;
use crate::model::{correlations, CholeskySpec, LinearUtilitySpec, NamedValue, ParameterSet, UtilitySpec};
use crate::rng::StreamKey;
use crate::simulator::SimulatorConfig;
use objective::{
    dnn_inputs, loss_and_grad, probability_matrix, DnnObjective, MnlObjective, Objective,
    ProbitObjective, RumObjective,
};

fn default_dnn_hidden() -> Vec<usize> {
    vec![100, 100]
}

/// Which model to estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Simulated random-utility network with a pluggable error kernel.
    RumNn {
        utility: UtilitySpec,
        #[serde(default)]
        error: ErrorDistribution,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        correlation: Option<CholeskySpec>,
    },
    /// Closed-form multinomial logit.
    Mnl { utility: LinearUtilitySpec },
    /// Closed-form binary probit with IID standard normal errors.
    BinaryProbit { utility: LinearUtilitySpec },
    /// Fully connected softmax classifier over all inputs.
    PlainDnn {
        #[serde(default = "default_dnn_hidden")]
        hidden: Vec<usize>,
    },
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::RumNn {
                utility,
                error,
                correlation,
            } => {
                let kind = match utility {
                    UtilitySpec::Linear(_) => "linear",
                    UtilitySpec::Nonlinear(_) => "nonlinear",
                };
                let corr = if correlation.is_some() { "+cholesky" } else { "" };
                format!("RUM-NN({}{corr}, {kind})", error.name())
            }
            ModelSpec::Mnl { .. } => "MNL".into(),
            ModelSpec::BinaryProbit { .. } => "Probit".into(),
            ModelSpec::PlainDnn { .. } => "DNN".into(),
        }
    }

    fn standardizes(&self) -> bool {
        match self {
            ModelSpec::RumNn { utility, .. } => utility.wants_standardized_inputs(),
            ModelSpec::PlainDnn { .. } => true,
            _ => false,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let j = data.alternatives();
        match self {
            ModelSpec::RumNn {
                utility,
                error,
                correlation,
            } => {
                error.validate()?;
                if utility.alternatives() != j {
                    return Err(Error::shape("utility alternatives", utility.alternatives(), j));
                }
                if let Some(c) = correlation {
                    c.validate()?;
                    if c.alternatives != j {
                        return Err(Error::shape("correlation alternatives", c.alternatives, j));
                    }
                }
            }
            ModelSpec::Mnl { utility } => {
                if utility.alternatives != j {
                    return Err(Error::shape("utility alternatives", utility.alternatives, j));
                }
            }
            ModelSpec::BinaryProbit { utility } => {
                if j != 2 || utility.alternatives != 2 {
                    return Err(Error::config("binary probit requires exactly two alternatives"));
                }
            }
            ModelSpec::PlainDnn { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::config("hidden layer widths must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    FullBatch,
    /// Shuffled minibatches of `size` situations; one Adam step per batch.
    MiniBatch { size: usize },
}

fn default_learning_rate() -> f64 {
    0.001
}

fn default_epochs() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub batch: BatchMode,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    /// Lower bound applied to simulated probabilities before the log;
    /// `max(1e-6, 1/(10Q))` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability_floor: Option<f64>,
    /// Smoothing scale used for the reported metrics; training scale when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_lambda: Option<f64>,
    /// Seeds weight initialization and minibatch order.
    #[serde(default)]
    pub seed: u64,
    /// Starting values overriding the defaults by name (raw scale).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<NamedValue>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            batch: BatchMode::FullBatch,
            simulator: SimulatorConfig::default(),
            probability_floor: None,
            eval_lambda: None,
            seed: 0,
            initial: Vec::new(),
        }
    }
}

impl FitOptions {
    pub fn floor(&self) -> f64 {
        self.probability_floor
            .unwrap_or_else(|| f64::max(1e-6, 1.0 / (10.0 * self.simulator.q as f64)))
    }

    pub fn validate(&self, alternatives: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain {
                what: "learning rate",
                value: self.learning_rate,
            });
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if let BatchMode::MiniBatch { size: 0 } = self.batch {
            return Err(Error::config("minibatch size must be at least 1"));
        }
        self.simulator.validate()?;
        let floor = self.floor();
        if !(floor > 0.0 && floor < 1.0 / alternatives as f64) {
            return Err(Error::Domain {
                what: "probability floor",
                value: floor,
            });
        }
        if let Some(l) = self.eval_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Domain {
                    what: "evaluation lambda",
                    value: l,
                });
            }
        }
        Ok(())
    }

    fn eval_simulator(&self) -> SimulatorConfig {
        SimulatorConfig {
            lambda: self.eval_lambda.unwrap_or(self.simulator.lambda),
            ..self.simulator
        }
    }
}

/// Log-likelihood and prediction accuracy on one dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub log_likelihood: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    /// Estimated parameters on their raw optimization scale.
    pub params: ParameterSet,
    /// Interpretable parameters: coefficients as estimated, correlation
    /// parameters as the entries of `LLᵀ`.
    pub reported: ParameterSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    /// Training negative log-likelihood per epoch.
    pub loss_trace: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub train: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Metrics>,
    pub wall_time_secs: f64,
    pub options: FitOptions,
}

impl FitResult {
    /// Metrics on new data, applying the stored standardization.
    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        let p = self.probabilities(data)?;
        metrics_from(&p, data.choices(), self.options.floor())
    }

    pub fn probabilities(&self, data: &Dataset) -> Result<Matrix> {
        let owned;
        let d = match &self.standardizer {
            Some(s) => {
                owned = s.apply(data)?;
                &owned
            }
            None => data,
        };
        probabilities(&self.model, &self.params, d, &self.options.eval_simulator())
    }
}

/// `-Σ_i ln max(P[i, y_i], floor)`.
pub fn neg_log_likelihood(p: &Matrix, y: &[usize], floor: f64) -> Result<f64> {
    if p.rows() != y.len() {
        return Err(Error::shape("probability rows", y.len(), p.rows()));
    }
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        if yi >= p.cols() {
            return Err(Error::shape("choice index", p.cols(), yi));
        }
        total -= libm::log(f64::max(p[(i, yi)], floor));
    }
    Ok(total)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

fn metrics_from(p: &Matrix, y: &[usize], floor: f64) -> Result<Metrics> {
    let ll = -neg_log_likelihood(p, y, floor)?;
    let hits = y.iter().enumerate().filter(|&(i, &yi)| argmax(p.row(i)) == yi).count();
    Ok(Metrics {
        n: y.len(),
        log_likelihood: ll,
        accuracy: if y.is_empty() { 0.0 } else { hits as f64 / y.len() as f64 },
    })
}

enum Bound<'a> {
    Rum(RumObjective<'a>),
    Mnl(MnlObjective<'a>),
    Probit(ProbitObjective<'a>),
    Dnn(DnnObjective<'a>),
}

macro_rules! dispatch {
    ($b:expr, $o:ident => $body:expr) => {
        match $b {
            Bound::Rum($o) => $body,
            Bound::Mnl($o) => $body,
            Bound::Probit($o) => $body,
            Bound::Dnn($o) => $body,
        }
    };
}

struct Layout {
    names: Vec<String>,
    initial: Vec<f64>,
}

fn bind<'a>(
    spec: &ModelSpec,
    data: &'a Dataset,
    sim: &SimulatorConfig,
    floor: f64,
    seed: u64,
) -> Result<(Bound<'a>, Layout)> {
    spec.validate(data)?;
    Ok(match spec {
        ModelSpec::RumNn {
            utility,
            error,
            correlation,
        } => {
            let bound = utility.bind(data)?;
            let mut names = bound.parameter_names().to_vec();
            let mut initial = bound.initial_values(seed);
            if let Some(c) = correlation {
                names.extend(c.parameter_names());
                initial.extend(core::iter::repeat_n(0.0, c.num_free()));
            }
            let obj = RumObjective::new(data, bound, *error, correlation.clone(), sim, floor);
            (Bound::Rum(obj), Layout { names, initial })
        }
        ModelSpec::Mnl { utility } => {
            let model = utility.bind(data)?;
            let names = model.parameter_names().to_vec();
            let initial = vec![0.0; names.len()];
            (Bound::Mnl(MnlObjective { data, model }), Layout { names, initial })
        }
        ModelSpec::BinaryProbit { utility } => {
            let model = utility.bind(data)?;
            let names = model.parameter_names().to_vec();
            let initial = vec![0.0; names.len()];
            (Bound::Probit(ProbitObjective { data, model }), Layout { names, initial })
        }
        ModelSpec::PlainDnn { hidden } => {
            let net = Mlp::new(dnn_inputs(data), hidden, data.alternatives());
            let names = net.parameter_names("dnn");
            let mut initial = vec![0.0; net.num_params()];
            net.init(&mut StreamKey::new(seed).split(0x646e6e).stream(), &mut initial);
            (Bound::Dnn(DnnObjective { data, net }), Layout { names, initial })
        }
    })
}

fn check_params(names: &[String], values: &[f64]) -> Result<()> {
    if names.len() != values.len() {
        return Err(Error::shape("parameter vector", names.len(), values.len()));
    }
    Ok(())
}

fn check_finite(names: &[String], grad: &[f64]) -> Result<()> {
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            parameter: names[k].clone(),
            detail: format!("gradient is {}", grad[k]),
        });
    }
    Ok(())
}

/// Simulated negative log-likelihood at `params` (fixed draws).
pub fn objective_value(spec: &ModelSpec, params: &ParameterSet, data: &Dataset, opts: &FitOptions) -> Result<f64> {
    let (b, layout) = bind(spec, data, &opts.simulator, opts.floor(), opts.seed)?;
    check_params(&layout.names, params.values())?;
    let all: Vec<usize> = (0..data.len()).collect();
    dispatch!(&b, o => Ok(loss_and_grad(o, params.values(), &all, None, false)?.0))
}

/// Reverse-mode gradient of [`objective_value`], aligned with `params`.
pub fn gradient(spec: &ModelSpec, params: &ParameterSet, data: &Dataset, opts: &FitOptions) -> Result<Vec<f64>> {
    let (b, layout) = bind(spec, data, &opts.simulator, opts.floor(), opts.seed)?;
    check_params(&layout.names, params.values())?;
    let all: Vec<usize> = (0..data.len()).collect();
    let grad = dispatch!(&b, o => loss_and_grad(o, params.values(), &all, None, true)?.1);
    check_finite(&layout.names, &grad)?;
    Ok(grad)
}

/// Analytic gradient against central finite differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub names: Vec<String>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)` per coordinate.
    pub relative_error: Vec<f64>,
}

/// Denominator floor of the gradient-check relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn worst_parameter(&self) -> Option<&str> {
        let k = self
            .relative_error
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?
            .0;
        Some(&self.names[k])
    }
}

/// Compare [`gradient`] with `(f(θ + h e_k) - f(θ - h e_k)) / 2h` on every coordinate.
pub fn gradient_check(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &Dataset,
    opts: &FitOptions,
    step: f64,
) -> Result<GradCheck> {
    let (b, layout) = bind(spec, data, &opts.simulator, opts.floor(), opts.seed)?;
    check_params(&layout.names, params.values())?;
    let all: Vec<usize> = (0..data.len()).collect();
    let analytic = dispatch!(&b, o => loss_and_grad(o, params.values(), &all, None, true)?.1);
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut theta = params.values().to_vec();
    for k in 0..theta.len() {
        let x = theta[k];
        theta[k] = x + step;
        let up = dispatch!(&b, o => loss_and_grad(o, &theta, &all, None, false)?.0);
        theta[k] = x - step;
        let down = dispatch!(&b, o => loss_and_grad(o, &theta, &all, None, false)?.0);
        theta[k] = x;
        numeric.push((up - down) / (2.0 * step));
    }
    let relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| libm::fabs(a - n) / f64::max(f64::max(libm::fabs(a), libm::fabs(n)), GRADCHECK_FLOOR))
        .collect();
    Ok(GradCheck {
        names: layout.names,
        analytic,
        numeric,
        relative_error,
    })
}

/// Parameter names and default starting values of a model on a dataset.
pub fn initial_parameters(spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<ParameterSet> {
    let sim = SimulatorConfig {
        q: 1,
        ..SimulatorConfig::default()
    };
    let (_, layout) = bind(spec, data, &sim, 1e-6, seed)?;
    ParameterSet::new(layout.names, layout.initial)
}

/// Probability matrix on (already standardized) data.
pub fn probabilities(spec: &ModelSpec, params: &ParameterSet, data: &Dataset, sim: &SimulatorConfig) -> Result<Matrix> {
    let (b, layout) = bind(spec, data, sim, 1e-6, 0)?;
    check_params(&layout.names, params.values())?;
    let j = data.alternatives();
    dispatch!(&b, o => probability_matrix(o, params.values(), j))
}

/// Log-likelihood and accuracy of `params` on (already standardized) data.
pub fn predict_accuracy(
    spec: &ModelSpec,
    params: &ParameterSet,
    data: &Dataset,
    sim: &SimulatorConfig,
    floor: f64,
) -> Result<Metrics> {
    let p = probabilities(spec, params, data, sim)?;
    metrics_from(&p, data.choices(), floor)
}

struct Trained {
    params: Vec<f64>,
    trace: Vec<f64>,
    best_epoch: usize,
}

fn shuffled(n: usize, key: StreamKey) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut s = key.stream();
    for i in (1..n).rev() {
        idx.swap(i, s.next_index(i + 1));
    }
    idx
}

fn train<O: Objective>(obj: &O, names: &[String], init: Vec<f64>, opts: &FitOptions) -> Result<Trained> {
    let n = obj.data().len();
    let mut params = init;
    let mut adam = Adam::new(params.len(), opts.learning_rate);
    let mut trace = Vec::with_capacity(opts.epochs);
    let mut best = (f64::INFINITY, params.clone(), 0);
    let all: Vec<usize> = (0..n).collect();
    for epoch in 0..opts.epochs {
        let e = Some(epoch as u64);
        match opts.batch {
            BatchMode::FullBatch => {
                let (loss, mut grad) = loss_and_grad(obj, &params, &all, e, true)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        loss_trace: trace,
                    });
                }
                check_finite(names, &grad)?;
                trace.push(loss);
                if loss < best.0 {
                    best = (loss, params.clone(), epoch);
                }
                let scale = 1.0 / n as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                adam.step(&mut params, &grad);
            }
            BatchMode::MiniBatch { size } => {
                let order = shuffled(n, StreamKey::new(opts.seed).split(0x6d62).split(epoch as u64));
                let mut total = 0.0;
                for batch in order.chunks(size) {
                    let (loss, mut grad) = loss_and_grad(obj, &params, batch, e, true)?;
                    if !loss.is_finite() {
                        return Err(Error::Divergence {
                            epoch,
                            loss_trace: trace,
                        });
                    }
                    check_finite(names, &grad)?;
                    total += loss;
                    let scale = 1.0 / batch.len() as f64;
                    grad.iter_mut().for_each(|g| *g *= scale);
                    adam.step(&mut params, &grad);
                }
                trace.push(total);
                if total < best.0 {
                    best = (total, params.clone(), epoch);
                }
            }
        }
    }
    Ok(Trained {
        params: best.1,
        trace,
        best_epoch: best.2,
    })
}

fn reported(spec: &ModelSpec, params: &ParameterSet) -> Result<ParameterSet> {
    match spec {
        ModelSpec::RumNn {
            correlation: Some(c),
            ..
        } => {
            let k = c.num_free();
            let nu = params.len() - k;
            let l = c.factor(&params.values()[nu..])?;
            let mut values = params.values()[..nu].to_vec();
            values.extend(correlations(&l));
            ParameterSet::new(params.names().to_vec(), values)
        }
        _ => Ok(params.clone()),
    }
}

/// Fit a model by Adam on the simulated (or exact) negative log-likelihood.
pub fn fit(spec: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    fit_holdout(spec, data, None, opts)
}

/// [`fit`] that also reports metrics on a held-out dataset.
pub fn fit_holdout(spec: &ModelSpec, train_data: &Dataset, test: Option<&Dataset>, opts: &FitOptions) -> Result<FitResult> {
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();
    if train_data.is_empty() {
        return Err(Error::config("cannot fit on an empty dataset"));
    }
    opts.validate(train_data.alternatives())?;
    let standardizer = spec.standardizes().then(|| Standardizer::fit(train_data));
    let owned = standardizer.as_ref().map(|s| s.apply(train_data)).transpose()?;
    let data = owned.as_ref().unwrap_or(train_data);
    let (b, layout) = bind(spec, data, &opts.simulator, opts.floor(), opts.seed)?;
    let mut init = layout.initial;
    for nv in &opts.initial {
        let k = layout
            .names
            .iter()
            .position(|n| *n == nv.name)
            .ok_or_else(|| Error::Schema(format!("unknown initial parameter `{}`", nv.name)))?;
        init[k] = nv.value;
    }
    let trained = dispatch!(&b, o => train(o, &layout.names, init, opts)?);
    drop(b);
    let params = ParameterSet::new(layout.names, trained.params)?;
    let mut result = FitResult {
        reported: reported(spec, &params)?,
        model: spec.clone(),
        params,
        standardizer,
        loss_trace: trained.trace,
        best_epoch: trained.best_epoch,
        train: Metrics {
            n: 0,
            log_likelihood: 0.0,
            accuracy: 0.0,
        },
        test: None,
        wall_time_secs: 0.0,
        options: opts.clone(),
    };
    let p = probabilities(spec, &result.params, data, &opts.eval_simulator())?;
    result.train = metrics_from(&p, data.choices(), opts.floor())?;
    if let Some(t) = test {
        result.test = Some(result.evaluate(t)?);
    }
    #[cfg(feature = "std")]
    {
        result.wall_time_secs = start.elapsed().as_secs_f64();
    }
    Ok(result)
}
