//! Experiment protocols driven by a [`RunConfig`].
//!
//! Every protocol returns its results as plain data; writing files is left to
//! the caller. Failures of individual fits are collected rather than aborting
//! the protocol.

use rumsim_core::analysis::{equivalence_table, linear_fit, ParamSamples};
use rumsim_core::data::Dataset;
use rumsim_core::estimation::{
    fit_holdout, gradient_check, initial_parameters, FitOptions, FitResult, Metrics, ModelSpec,
};
use rumsim_core::model::UtilitySpec;
use rumsim_core::rng::StreamKey;
use rumsim_core::synthdata::{
    generate_dataset, monte_carlo_range, replication_seeds, Estimator, RecoveryTable, SynthConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataio::{kfold_split, load_dataset, IngestionReport};
use crate::error::{Error, Result};
use crate::report::{
    Estimate, EquivalenceReport, EstimatorColumn, FitRow, ParamTable, QSweep, Report, TimingSweep,
};

/// A fit or replication that failed without stopping the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub item: String,
    pub error: String,
}

pub struct Source {
    pub data: Dataset,
    pub report: Option<IngestionReport>,
}

/// The configured dataset: generated from `synth` or read from `dataset`.
pub fn load_source(cfg: &RunConfig) -> Result<Source> {
    match (&cfg.synth, &cfg.dataset) {
        (Some(s), _) => Ok(Source {
            data: generate_dataset(s)?,
            report: None,
        }),
        (None, Some(d)) => {
            let loaded = load_dataset(&d.path, &d.schema)?;
            Ok(Source {
                data: loaded.data,
                report: Some(loaded.report),
            })
        }
        (None, None) => Err(Error::config("no data source configured")),
    }
}

fn synth(cfg: &RunConfig) -> Result<&SynthConfig> {
    cfg.synth
        .as_ref()
        .ok_or_else(|| Error::config("this protocol needs a `synth` data source"))
}

/// Whether the reported parameters of `spec` are interpretable coefficients.
fn interpretable(spec: &ModelSpec) -> bool {
    match spec {
        ModelSpec::RumNn { utility, .. } => matches!(utility, UtilitySpec::Linear(_)),
        ModelSpec::Mnl { .. } | ModelSpec::BinaryProbit { .. } => true,
        ModelSpec::PlainDnn { .. } => false,
    }
}

fn options(e: &Estimator, cfg: &RunConfig) -> FitOptions {
    e.options.clone().unwrap_or_else(|| cfg.fit.clone())
}

fn table_parameters(cfg: &RunConfig, estimators: &[Estimator], names: impl Fn(&str) -> Vec<String>) -> (Vec<String>, Option<Vec<f64>>) {
    if let Some(s) = &cfg.synth {
        let truth = s.truth();
        return (truth.iter().map(|(n, _)| n.clone()).collect(), Some(truth.iter().map(|(_, v)| *v).collect()));
    }
    let mut params: Vec<String> = Vec::new();
    for e in estimators.iter().filter(|e| interpretable(&e.spec)) {
        for n in names(&e.label) {
            if !params.contains(&n) {
                params.push(n);
            }
        }
    }
    (params, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub label: String,
    pub result: FitResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub rows: Vec<FitRow>,
    pub params: ParamTable,
    pub fits: Vec<NamedFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingestion: Option<IngestionReport>,
}

/// Fit every estimator on the full dataset.
pub fn run_fit(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<(FitOutcome, Vec<Failure>)> {
    let estimators = cfg.estimator_list()?;
    let src = load_source(cfg)?;
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for e in &estimators {
        progress(&format!("fitting {}", e.label));
        match fit_holdout(&e.spec, &src.data, None, &options(e, cfg)) {
            Ok(r) => fits.push(NamedFit {
                label: e.label.clone(),
                result: r,
            }),
            Err(err) => failures.push(Failure {
                item: e.label.clone(),
                error: err.to_string(),
            }),
        }
    }
    let rows = fits
        .iter()
        .map(|f| FitRow {
            label: f.label.clone(),
            group: "all".into(),
            train: f.result.train,
            test: None,
        })
        .collect();
    let reported_names = |label: &str| -> Vec<String> {
        fits.iter()
            .find(|f| f.label == label)
            .map(|f| f.result.reported.names().to_vec())
            .unwrap_or_default()
    };
    let (parameters, truth) = table_parameters(cfg, &estimators, reported_names);
    let columns = estimators
        .iter()
        .filter(|e| interpretable(&e.spec))
        .map(|e| {
            let fit = fits.iter().find(|f| f.label == e.label);
            EstimatorColumn {
                label: e.label.clone(),
                n: usize::from(fit.is_some()),
                failures: usize::from(fit.is_none()),
                cells: parameters
                    .iter()
                    .map(|p| {
                        fit.and_then(|f| f.result.reported.get(p))
                            .map(|mean| Estimate { mean, std: None })
                    })
                    .collect(),
            }
        })
        .collect();
    Ok((
        FitOutcome {
            rows,
            params: ParamTable {
                parameters,
                truth,
                estimators: columns,
            },
            fits,
            ingestion: src.report,
        },
        failures,
    ))
}

/// Metrics of previously fitted models on the configured dataset.
pub fn run_eval(cfg: &RunConfig, fits: &[NamedFit]) -> Result<(Vec<FitRow>, Vec<Failure>)> {
    let src = load_source(cfg)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for f in fits {
        match f.result.evaluate(&src.data) {
            Ok(m) => rows.push(FitRow {
                label: f.label.clone(),
                group: "eval".into(),
                train: m,
                test: None,
            }),
            Err(e) => failures.push(Failure {
                item: f.label.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok((rows, failures))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub folds: usize,
    /// Per-fold rows followed by one `all folds` row per estimator.
    pub rows: Vec<FitRow>,
    pub params: ParamTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingestion: Option<IngestionReport>,
}

impl CvOutcome {
    /// Rows of one estimator for fold `k` (0-based).
    pub fn fold(&self, label: &str, k: usize) -> Option<&FitRow> {
        let group = format!("fold {}", k + 1);
        self.rows.iter().find(|r| r.label == label && r.group == group)
    }

    /// Totals over all folds of one estimator.
    pub fn total(&self, label: &str) -> Option<&FitRow> {
        self.rows.iter().find(|r| r.label == label && r.group == "all folds")
    }
}

fn pooled(ms: &[Metrics]) -> Metrics {
    let n: usize = ms.iter().map(|m| m.n).sum();
    Metrics {
        n,
        log_likelihood: ms.iter().map(|m| m.log_likelihood).sum(),
        accuracy: ms.iter().map(|m| m.accuracy * m.n as f64).sum::<f64>() / n.max(1) as f64,
    }
}

fn compare_pair(labels: &[String], explicit: &Option<[String; 2]>) -> Option<(String, String)> {
    match explicit {
        Some([a, b]) => Some((a.clone(), b.clone())),
        None if labels.len() >= 2 => Some((labels[0].clone(), labels[1].clone())),
        None => None,
    }
}

fn equivalence(
    pair: Option<(String, String)>,
    samples: impl Fn(&str) -> Option<ParamSamples>,
    margin: Option<f64>,
) -> Result<Option<EquivalenceReport>> {
    let Some((a, b)) = pair else { return Ok(None) };
    let (Some(sa), Some(sb)) = (samples(&a), samples(&b)) else {
        return Ok(None);
    };
    if sa.len() < 2 || sb.len() < 2 {
        return Ok(None);
    }
    Ok(Some(EquivalenceReport {
        rows: equivalence_table(&sa, &sb, margin)?,
        label_a: a,
        label_b: b,
    }))
}

fn summary_column(label: &str, parameters: &[String], samples: &ParamSamples, failures: usize) -> EstimatorColumn {
    let cells = parameters
        .iter()
        .map(|p| {
            let x = samples.get(p)?;
            let x: Vec<f64> = x.into_iter().filter(|v| v.is_finite()).collect();
            if x.is_empty() {
                return None;
            }
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let std = (x.len() > 1)
                .then(|| (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
            Some(Estimate { mean, std })
        })
        .collect();
    EstimatorColumn {
        label: label.to_string(),
        n: samples.len(),
        failures,
        cells,
    }
}

/// k-fold cross-validation of every estimator on identical folds.
pub fn run_cv(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<(CvOutcome, Vec<Failure>)> {
    let estimators = cfg.estimator_list()?;
    let src = load_source(cfg)?;
    let k = cfg.cv.folds;
    let folds = kfold_split(src.data.len(), k, cfg.seed)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut per_estimator: Vec<(Vec<Metrics>, Vec<Metrics>, Vec<FitResult>, usize)> =
        estimators.iter().map(|_| (Vec::new(), Vec::new(), Vec::new(), 0)).collect();
    for (f, (train_idx, test_idx)) in folds.iter().enumerate() {
        let train = src.data.subset(train_idx);
        let test = src.data.subset(test_idx);
        for (e, acc) in estimators.iter().zip(per_estimator.iter_mut()) {
            progress(&format!("fold {}/{k}: {}", f + 1, e.label));
            match fit_holdout(&e.spec, &train, Some(&test), &options(e, cfg)) {
                Ok(r) => {
                    let test_m = r.test.expect("holdout metrics requested");
                    rows.push(FitRow {
                        label: e.label.clone(),
                        group: format!("fold {}", f + 1),
                        train: r.train,
                        test: Some(test_m),
                    });
                    acc.0.push(r.train);
                    acc.1.push(test_m);
                    acc.2.push(r);
                }
                Err(err) => {
                    acc.3 += 1;
                    failures.push(Failure {
                        item: format!("{} fold {}", e.label, f + 1),
                        error: err.to_string(),
                    });
                }
            }
        }
    }
    for (e, acc) in estimators.iter().zip(&per_estimator) {
        if acc.0.is_empty() {
            continue;
        }
        rows.push(FitRow {
            label: e.label.clone(),
            group: "all folds".into(),
            train: pooled(&acc.0),
            test: Some(pooled(&acc.1)),
        });
    }
    let samples_of = |label: &str| -> Option<ParamSamples> {
        let i = estimators.iter().position(|e| e.label == label)?;
        let fits = &per_estimator[i].2;
        let names = fits.first()?.reported.names().to_vec();
        let mut s = ParamSamples::new(names.clone());
        for r in fits {
            let row: Vec<f64> = names.iter().map(|n| r.reported.get(n).unwrap_or(f64::NAN)).collect();
            s.push(&row).ok()?;
        }
        Some(s)
    };
    let names_of = |label: &str| samples_of(label).map(|s| s.names().to_vec()).unwrap_or_default();
    let (parameters, truth) = table_parameters(cfg, &estimators, names_of);
    let columns = estimators
        .iter()
        .zip(&per_estimator)
        .filter(|(e, _)| interpretable(&e.spec))
        .map(|(e, acc)| {
            let s = samples_of(&e.label).unwrap_or_else(|| ParamSamples::new(Vec::new()));
            summary_column(&e.label, &parameters, &s, acc.3)
        })
        .collect();
    let labels: Vec<String> = estimators.iter().map(|e| e.label.clone()).collect();
    let equivalence = equivalence(compare_pair(&labels, &cfg.cv.compare), samples_of, cfg.cv.margin)?;
    Ok((
        CvOutcome {
            folds: k,
            rows,
            params: ParamTable {
                parameters,
                truth,
                estimators: columns,
            },
            equivalence,
            ingestion: src.report,
        },
        failures,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub table: RecoveryTable,
    pub params: ParamTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceReport>,
}

fn recovery_params(table: &RecoveryTable, labels: &[String]) -> ParamTable {
    let parameters: Vec<String> = table.truth.iter().map(|(n, _)| n.clone()).collect();
    let estimators = labels
        .iter()
        .map(|l| {
            let s = table.samples(l).unwrap_or_else(|| ParamSamples::new(parameters.clone()));
            let failures = table
                .estimators
                .iter()
                .find(|e| &e.label == l)
                .map_or(0, |e| e.runs.iter().filter(|r| r.result.is_err()).count());
            summary_column(l, &parameters, &s, failures)
        })
        .collect();
    ParamTable {
        parameters,
        truth: Some(table.truth.iter().map(|(_, v)| *v).collect()),
        estimators,
    }
}

fn replication_failures(table: &RecoveryTable) -> Vec<Failure> {
    table
        .estimators
        .iter()
        .flat_map(|e| {
            e.runs.iter().filter_map(move |r| {
                r.result.as_ref().err().map(|msg| Failure {
                    item: format!("{} replication {}", e.label, r.replication),
                    error: msg.clone(),
                })
            })
        })
        .collect()
}

/// Replications `range` of the Monte Carlo recovery protocol.
pub fn run_montecarlo_range(
    cfg: &RunConfig,
    range: std::ops::Range<usize>,
    progress: &mut dyn FnMut(&str),
) -> Result<(MonteCarloOutcome, Vec<Failure>)> {
    let s = synth(cfg)?;
    let estimators = cfg.estimator_list()?;
    let table = monte_carlo_range(s, range, &estimators, &cfg.fit, |r, label| {
        progress(&format!("replication {}: {label}", r + 1));
    })?;
    let labels: Vec<String> = estimators.iter().map(|e| e.label.clone()).collect();
    let params = recovery_params(&table, &labels);
    let equivalence = equivalence(
        compare_pair(&labels, &cfg.montecarlo.compare),
        |l| table.samples(l),
        cfg.montecarlo.margin,
    )?;
    let failures = replication_failures(&table);
    Ok((
        MonteCarloOutcome {
            table,
            params,
            equivalence,
        },
        failures,
    ))
}

pub fn run_montecarlo(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<(MonteCarloOutcome, Vec<Failure>)> {
    run_montecarlo_range(cfg, 0..cfg.montecarlo.reps, progress)
}

fn simulated_estimator(cfg: &RunConfig) -> Result<Estimator> {
    cfg.estimator_list()?
        .into_iter()
        .find(|e| matches!(e.spec, ModelSpec::RumNn { .. }))
        .ok_or_else(|| Error::config("no simulation-based (rum_nn) estimator configured"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSweepOutcome {
    pub sweep: QSweep,
    pub timing: TimingSweep,
}

/// Estimate distributions across Q and wall time of a single fit across Q.
pub fn run_qsweep(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<(QSweepOutcome, Vec<Failure>)> {
    let s = synth(cfg)?;
    let est = simulated_estimator(cfg)?;
    let base = options(&est, cfg);
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for &q in &cfg.qsweep.q_values {
        let mut o = base.clone();
        o.simulator.q = q;
        let e = Estimator {
            options: Some(o),
            ..est.clone()
        };
        let table = monte_carlo_range(s, 0..cfg.qsweep.reps, std::slice::from_ref(&e), &cfg.fit, |r, _| {
            progress(&format!("Q = {q}: replication {}", r + 1));
        })?;
        failures.extend(replication_failures(&table).into_iter().map(|f| Failure {
            item: format!("Q = {q}: {}", f.item),
            ..f
        }));
        samples.push(table.samples(&est.label).expect("estimator present"));
    }
    let mut data_cfg = s.clone();
    data_cfg.seed = replication_seeds(s.seed, 0).0;
    let data = generate_dataset(&data_cfg)?;
    let mut wall = Vec::new();
    for &q in &cfg.qsweep.timing_q_values {
        progress(&format!("timing Q = {q}"));
        let mut o = base.clone();
        o.simulator.q = q;
        if let Some(ep) = cfg.qsweep.timing_epochs {
            o.epochs = ep;
        }
        let r = fit_holdout(&est.spec, &data, None, &o)?;
        wall.push(r.wall_time_secs);
    }
    let qs: Vec<f64> = cfg.qsweep.timing_q_values.iter().map(|&q| q as f64).collect();
    let fit = linear_fit(&qs, &wall)?;
    Ok((
        QSweepOutcome {
            sweep: QSweep {
                label: est.label.clone(),
                truth: s.truth(),
                q_values: cfg.qsweep.q_values.clone(),
                samples,
            },
            timing: TimingSweep {
                label: est.label,
                q_values: cfg.qsweep.timing_q_values.clone(),
                wall_secs: wall,
                fit,
            },
        },
        failures,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepOutcome {
    pub lambdas: Vec<f64>,
    /// One column per smoothing value.
    pub params: ParamTable,
}

/// Recovery of the simulation-based estimator across training smoothing values.
pub fn run_lambdasweep(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<(LambdaSweepOutcome, Vec<Failure>)> {
    let s = synth(cfg)?;
    let est = simulated_estimator(cfg)?;
    let base = options(&est, cfg);
    let parameters: Vec<String> = s.truth().into_iter().map(|(n, _)| n).collect();
    let mut columns = Vec::new();
    let mut failures = Vec::new();
    for &l in &cfg.lambdasweep.lambdas {
        let mut o = base.clone();
        o.simulator.lambda = l;
        let e = Estimator {
            options: Some(o),
            ..est.clone()
        };
        let table = monte_carlo_range(s, 0..cfg.lambdasweep.reps, std::slice::from_ref(&e), &cfg.fit, |r, _| {
            progress(&format!("lambda = {l}: replication {}", r + 1));
        })?;
        let fails = replication_failures(&table);
        let samples = table.samples(&est.label).expect("estimator present");
        columns.push(summary_column(&format!("{} lambda={l}", est.label), &parameters, &samples, fails.len()));
        failures.extend(fails.into_iter().map(|f| Failure {
            item: format!("lambda = {l}: {}", f.item),
            ..f
        }));
    }
    Ok((
        LambdaSweepOutcome {
            lambdas: cfg.lambdasweep.lambdas.clone(),
            params: ParamTable {
                parameters,
                truth: Some(s.truth().into_iter().map(|(_, v)| v).collect()),
                estimators: columns,
            },
        },
        failures,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub label: String,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_parameter: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub n: usize,
    pub q: usize,
    pub lambda: f64,
    pub step: f64,
    pub tolerance: f64,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_relative_error).fold(0.0, f64::max)
    }
}

/// Central finite differences against the analytic gradient of every estimator
/// at perturbed starting values on the first `gradcheck.n` situations.
pub fn run_gradcheck(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<GradcheckOutcome> {
    let g = &cfg.gradcheck;
    let data = match &cfg.synth {
        Some(s) => {
            let mut s = s.clone();
            s.n = g.n;
            generate_dataset(&s)?
        }
        None => {
            let d = load_source(cfg)?.data;
            let idx: Vec<usize> = (0..g.n.min(d.len())).collect();
            d.subset(&idx)
        }
    };
    let mut rows = Vec::new();
    for (k, e) in cfg.estimator_list()?.iter().enumerate() {
        progress(&format!("checking {}", e.label));
        let o = options(e, cfg);
        let init = initial_parameters(&e.spec, &data, o.seed)?;
        let mut st = StreamKey::new(cfg.seed).split(0x6763).split(k as u64).stream();
        let values = init
            .values()
            .iter()
            .map(|v| v + st.next_range(-g.spread, g.spread))
            .collect();
        let params = init.with_values(values)?;
        let check = gradient_check(&e.spec, &params, &data, &o, g.step)?;
        let err = check.max_relative_error();
        rows.push(GradcheckRow {
            label: e.label.clone(),
            parameters: params.len(),
            max_relative_error: err,
            worst_parameter: check.worst_parameter().map(String::from),
            passed: err <= g.tolerance,
        });
    }
    Ok(GradcheckOutcome {
        n: data.len(),
        q: cfg.fit.simulator.q,
        lambda: cfg.fit.simulator.lambda,
        step: g.step,
        tolerance: g.tolerance,
        rows,
    })
}

/// Results of one protocol, as stored next to the emitted reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Results {
    Fit(FitOutcome),
    Eval { rows: Vec<FitRow> },
    Cv(CvOutcome),
    MonteCarlo(MonteCarloOutcome),
    QSweep(QSweepOutcome),
    LambdaSweep(LambdaSweepOutcome),
    Gradcheck(GradcheckOutcome),
}

impl Results {
    /// Reports emitted for these results.
    pub fn reports(&self) -> Vec<Report<'_>> {
        let mut out = Vec::new();
        match self {
            Results::Fit(f) => {
                out.push(Report::Fit(&f.rows));
                out.push(Report::Recovery(&f.params));
            }
            Results::Eval { rows } => out.push(Report::Fit(rows)),
            Results::Cv(c) => {
                out.push(Report::Fit(&c.rows));
                out.push(Report::Recovery(&c.params));
                if let Some(e) = &c.equivalence {
                    out.push(Report::Equivalence(e));
                }
            }
            Results::MonteCarlo(m) => {
                out.push(Report::Recovery(&m.params));
                if let Some(e) = &m.equivalence {
                    out.push(Report::Equivalence(e));
                }
            }
            Results::QSweep(q) => {
                out.push(Report::QBoxplot(&q.sweep));
                out.push(Report::QTiming(&q.timing));
            }
            Results::LambdaSweep(l) => out.push(Report::Recovery(&l.params)),
            Results::Gradcheck(_) => {}
        }
        out
    }
}
