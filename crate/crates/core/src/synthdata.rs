//! Synthetic choice data with known utilities and Monte Carlo recovery runs.
//!
//! Per alternative `j`, with every input uniform on (-1, 1):
//! `k = h + ε_k`, `q = 2h + k + ε_q`, `p = 5 + z + 0.03·wz + ε_p` and
//! `V = β_p p + β_a a + β_b b + β_q q`. The observed choice maximizes
//! `V_j + ε_j`; only `(p, a, b, q)` are stored.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::analysis::{summarize, ParamSamples, Summary};
use crate::data::{AlternativeBlock, Dataset, SharedBlock};
use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions, FitResult, ModelSpec};
use crate::linalg::Matrix;
use crate::model::{factor_from_partials, LinearUtilitySpec};
use crate::rng::{Stream, StreamKey};

pub const ATTRIBUTES: [&str; 4] = ["p", "a", "b", "q"];

fn default_beta() -> [f64; 4] {
    [-1.0, 0.5, 0.5, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub alternatives: usize,
    pub n: usize,
    /// `(β_p, β_a, β_b, β_q)`.
    #[serde(default = "default_beta")]
    pub beta: [f64; 4],
    #[serde(default)]
    pub error: ErrorDistribution,
    /// Correlation of the first two alternatives' errors; the third has none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Replace every uniform input by zero (testing aid).
    #[serde(skip)]
    pub debug_zero_uniforms: bool,
}

impl SynthConfig {
    pub fn new(alternatives: usize, n: usize, error: ErrorDistribution, seed: u64) -> Self {
        SynthConfig {
            alternatives,
            n,
            beta: default_beta(),
            error,
            correlation: None,
            seed,
            debug_zero_uniforms: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.alternatives) {
            return Err(Error::config("synthetic data supports two or three alternatives"));
        }
        if self.n == 0 {
            return Err(Error::config("synthetic data needs at least one observation"));
        }
        self.error.validate()?;
        if let Some(a) = self.correlation {
            if self.alternatives != 3 {
                return Err(Error::config("a correlated error requires three alternatives"));
            }
            if !(a.abs() < 1.0) {
                return Err(Error::Domain {
                    what: "error correlation",
                    value: a,
                });
            }
        }
        Ok(())
    }

    /// Parameter names and true values in estimator naming.
    pub fn truth(&self) -> Vec<(String, f64)> {
        let mut t: Vec<(String, f64)> = ATTRIBUTES
            .iter()
            .zip(self.beta)
            .map(|(a, b)| (format!("beta_{a}"), b))
            .collect();
        if let Some(a) = self.correlation {
            t.push(("A12".to_string(), a));
        }
        t
    }

    /// Generic linear specification matching the generator.
    pub fn utility_spec(&self) -> LinearUtilitySpec {
        LinearUtilitySpec::generic(self.alternatives, &ATTRIBUTES)
    }
}

fn uniform(s: &mut Stream, zero: bool) -> f64 {
    let u = s.next_range(-1.0, 1.0);
    if zero {
        0.0
    } else {
        u
    }
}

/// Draw one dataset; situation `i` uses stream `i` of the seed.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let j_count = cfg.alternatives;
    let factor = cfg
        .correlation
        .map(|a| factor_from_partials(2, &[a]))
        .transpose()?;
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n * 4); j_count];
    let mut choice = Vec::with_capacity(cfg.n);
    let root = StreamKey::new(cfg.seed);
    let mut u = vec![0.0; j_count];
    for i in 0..cfg.n {
        let mut s = root.split(i as u64).stream();
        for j in 0..j_count {
            let zero = cfg.debug_zero_uniforms;
            let a = uniform(&mut s, zero);
            let b = uniform(&mut s, zero);
            let z = uniform(&mut s, zero);
            let wz = uniform(&mut s, zero);
            let h = uniform(&mut s, zero);
            let ep = uniform(&mut s, zero);
            let eq = uniform(&mut s, zero);
            let ek = uniform(&mut s, zero);
            let k = h + ek;
            let q = 2.0 * h + k + eq;
            let p = 5.0 + z + 0.03 * wz + ep;
            let [bp, ba, bb, bq] = cfg.beta;
            u[j] = bp * p + ba * a + bb * b + bq * q;
            values[j].extend_from_slice(&[p, a, b, q]);
        }
        match &factor {
            Some(l) => {
                let e0 = cfg.error.quantile_unchecked(s.next_uniform());
                let e1 = cfg.error.quantile_unchecked(s.next_uniform());
                u[0] += l[(0, 0)] * e0;
                u[1] += l[(1, 0)] * e0 + l[(1, 1)] * e1;
            }
            None => {
                for uj in u.iter_mut() {
                    *uj += cfg.error.quantile_unchecked(s.next_uniform());
                }
            }
        }
        choice.push(crate::estimation::argmax(&u));
    }
    let alternatives = values
        .into_iter()
        .enumerate()
        .map(|(j, v)| AlternativeBlock {
            name: (j + 1).to_string(),
            attributes: ATTRIBUTES.iter().map(|a| a.to_string()).collect(),
            values: v,
        })
        .collect();
    Dataset::new(alternatives, SharedBlock::default(), choice, None)
}

/// Deterministic utilities of every generated row under the true coefficients.
pub fn true_utilities(cfg: &SynthConfig, data: &Dataset) -> Matrix {
    let j = data.alternatives();
    let mut m = Matrix::zeros(data.len(), j);
    for i in 0..data.len() {
        let obs = data.obs(i);
        for jj in 0..j {
            let x = obs.alt(jj);
            m[(i, jj)] = (0..4).map(|k| cfg.beta[k] * x[k]).sum();
        }
    }
    m
}

/// Seeds of replication `r`: `(dataset, simulator draws)`.
pub fn replication_seeds(base: u64, r: usize) -> (u64, u64) {
    let key = StreamKey::new(base).split(r as u64);
    (key.u64_at(0), key.u64_at(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub label: String,
    pub spec: ModelSpec,
    /// Per-estimator options; the shared options otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<FitOptions>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub dataset_seed: u64,
    /// Reported parameters, or the failure message.
    pub result: core::result::Result<Vec<(String, f64)>, String>,
    pub wall_time_secs: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRuns {
    pub label: String,
    pub runs: Vec<ReplicationOutcome>,
}

/// Estimates of every estimator over every replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTable {
    pub config: SynthConfig,
    pub truth: Vec<(String, f64)>,
    pub estimators: Vec<EstimatorRuns>,
}

/// One row of the recovery summary.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryCell {
    pub parameter: String,
    pub truth: f64,
    /// `None` when fewer than two replications succeeded.
    pub summary: Option<Summary>,
    pub failures: usize,
}

impl RecoveryTable {
    /// Successful estimates of one estimator.
    pub fn samples(&self, label: &str) -> Option<ParamSamples> {
        let runs = self.estimators.iter().find(|e| e.label == label)?;
        let names: Vec<String> = self.truth.iter().map(|(n, _)| n.clone()).collect();
        let mut samples = ParamSamples::new(names.clone());
        for run in &runs.runs {
            if let Ok(values) = &run.result {
                let row: Vec<f64> = names
                    .iter()
                    .map(|n| {
                        values
                            .iter()
                            .find(|(k, _)| k == n)
                            .map_or(f64::NAN, |(_, v)| *v)
                    })
                    .collect();
                samples.push(&row).expect("row length matches names");
            }
        }
        Some(samples)
    }

    /// Mean and standard deviation of each true parameter per estimator.
    pub fn summary(&self, label: &str) -> Option<Vec<RecoveryCell>> {
        let runs = self.estimators.iter().find(|e| e.label == label)?;
        let failures = runs.runs.iter().filter(|r| r.result.is_err()).count();
        let samples = self.samples(label)?;
        let stats = summarize(&samples).ok();
        Some(
            self.truth
                .iter()
                .enumerate()
                .map(|(k, (name, t))| RecoveryCell {
                    parameter: name.clone(),
                    truth: *t,
                    summary: stats
                        .as_ref()
                        .map(|s| s[k].clone())
                        .filter(|s| s.mean.is_finite()),
                    failures,
                })
                .collect(),
        )
    }
}

fn outcome(r: usize, seed: u64, res: Result<FitResult>) -> ReplicationOutcome {
    match res {
        Ok(f) => ReplicationOutcome {
            replication: r,
            dataset_seed: seed,
            result: Ok(f.reported.iter().map(|(n, v)| (n.to_string(), v)).collect()),
            wall_time_secs: f.wall_time_secs,
            best_epoch: f.best_epoch,
        },
        Err(e) => ReplicationOutcome {
            replication: r,
            dataset_seed: seed,
            result: Err(e.to_string()),
            wall_time_secs: 0.0,
            best_epoch: 0,
        },
    }
}

/// Generate `reps` independently seeded datasets and fit every estimator on each.
///
/// Replication `r` is fully determined by `(cfg.seed, r)`, so any subset of
/// replications can be recomputed alone. Fit failures are recorded per cell.
pub fn monte_carlo(
    cfg: &SynthConfig,
    reps: usize,
    estimators: &[Estimator],
    opts: &FitOptions,
) -> Result<RecoveryTable> {
    monte_carlo_range(cfg, 0..reps, estimators, opts, |_, _| {})
}

/// [`monte_carlo`] over a range of replication indices with a progress callback.
pub fn monte_carlo_range(
    cfg: &SynthConfig,
    reps: core::ops::Range<usize>,
    estimators: &[Estimator],
    opts: &FitOptions,
    mut progress: impl FnMut(usize, &str),
) -> Result<RecoveryTable> {
    cfg.validate()?;
    if reps.len() < 2 {
        return Err(Error::InsufficientSamples {
            name: "replications".into(),
            found: reps.len(),
            required: 2,
        });
    }
    if estimators.is_empty() {
        return Err(Error::config("no estimators given"));
    }
    let mut runs: Vec<EstimatorRuns> = estimators
        .iter()
        .map(|e| EstimatorRuns {
            label: e.label.clone(),
            runs: Vec::new(),
        })
        .collect();
    for r in reps {
        let (data_seed, sim_seed) = replication_seeds(cfg.seed, r);
        let data = generate_dataset(&SynthConfig {
            seed: data_seed,
            ..cfg.clone()
        })?;
        for (e, out) in estimators.iter().zip(runs.iter_mut()) {
            let mut o = e.options.clone().unwrap_or_else(|| opts.clone());
            o.simulator.seed = sim_seed;
            o.seed = sim_seed;
            out.runs.push(outcome(r, data_seed, fit(&e.spec, &data, &o)));
            progress(r, &e.label);
        }
    }
    Ok(RecoveryTable {
        config: cfg.clone(),
        truth: cfg.truth(),
        estimators: runs,
    })
}
