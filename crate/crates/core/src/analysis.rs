//! Parameter summaries and equivalence statistics across folds or replications.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{student_t_cdf, student_t_sf};

/// Estimates of named parameters, one row per fold or replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSamples {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ParamSamples {
    pub fn new(names: Vec<String>) -> Self {
        ParamSamples {
            names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::shape("sample row", self.names.len(), row.len()));
        }
        self.rows.push(row.to_vec());
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// All estimates of parameter `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }

    pub fn get(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|k| self.column(k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn require_two(name: &str, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientSamples {
            name: name.into(),
            found: n,
            required: 2,
        });
    }
    Ok(())
}

pub fn summarize(samples: &ParamSamples) -> Result<Vec<Summary>> {
    require_two("samples", samples.len())?;
    samples
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let x = samples.column(k);
            let (mean, var) = mean_var(&x);
            Ok(Summary {
                name: name.clone(),
                n: x.len(),
                mean,
                std: libm::sqrt(var),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

impl TTest {
    /// Means are "Not different" at the 5% level.
    pub fn not_different(&self) -> bool {
        self.p_value > 0.05
    }
}

struct Welch {
    diff: f64,
    se: f64,
    df: f64,
}

fn welch(a: &[f64], b: &[f64]) -> Result<Welch> {
    require_two("first sample", a.len())?;
    require_two("second sample", b.len())?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let df = if se2 > 0.0 {
        se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    Ok(Welch {
        diff: ma - mb,
        se: libm::sqrt(se2),
        df,
    })
}

/// Welch two-sample t-test of equal means (two-sided).
pub fn two_sample_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    let w = welch(a, b)?;
    if w.se == 0.0 {
        let (t, p) = if w.diff == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(w.diff), 0.0)
        };
        return Ok(TTest { t, df: w.df, p_value: p });
    }
    let t = w.diff / w.se;
    let p = (2.0 * student_t_sf(libm::fabs(t), w.df)).min(1.0);
    Ok(TTest { t, df: w.df, p_value: p })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tost {
    pub margin: f64,
    pub p_value: f64,
    pub df: f64,
}

impl Tost {
    /// Both one-sided tests reject at the 5% level.
    pub fn equivalent(&self) -> bool {
        self.p_value < 0.05
    }
}

/// `0.2 × (|mean(a)| + |mean(b)|) / 2`.
pub fn default_margin(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len().max(1) as f64;
    let mb = b.iter().sum::<f64>() / b.len().max(1) as f64;
    0.2 * (libm::fabs(ma) + libm::fabs(mb)) / 2.0
}

/// Two one-sided Welch tests of `|mean(a) - mean(b)| < margin`.
pub fn tost(a: &[f64], b: &[f64], margin: f64) -> Result<Tost> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Domain {
            what: "equivalence margin",
            value: margin,
        });
    }
    let w = welch(a, b)?;
    let p = if w.se == 0.0 {
        if libm::fabs(w.diff) < margin {
            0.0
        } else {
            1.0
        }
    } else {
        let lower = student_t_sf((w.diff + margin) / w.se, w.df);
        let upper = student_t_cdf((w.diff - margin) / w.se, w.df);
        lower.max(upper)
    };
    Ok(Tost {
        margin,
        p_value: p,
        df: w.df,
    })
}

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::shape("regression points", x.len(), y.len()));
    }
    require_two("regression points", x.len())?;
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    if vx == 0.0 {
        return Err(Error::Domain {
            what: "variance of regressor",
            value: 0.0,
        });
    }
    let n1 = (x.len() - 1) as f64;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n1;
    let slope = cov / vx;
    let r_squared = if vy == 0.0 { 1.0 } else { cov * cov / (vx * vy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Paired t-test and TOST outcome for one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub ttest: TTest,
    pub tost: Tost,
}

/// Compare the common parameters of two sample sets; `margin` defaults per parameter.
///
/// Non-finite entries mark parameters an estimator does not have and are
/// dropped; parameters with fewer than two finite values on either side are skipped.
pub fn equivalence_table(a: &ParamSamples, b: &ParamSamples, margin: Option<f64>) -> Result<Vec<EquivalenceRow>> {
    let finite = |v: Vec<f64>| -> Vec<f64> { v.into_iter().filter(|x| x.is_finite()).collect() };
    let mut rows = Vec::new();
    for (k, name) in a.names().iter().enumerate() {
        let Some(yb) = b.get(name) else { continue };
        let (ya, yb) = (finite(a.column(k)), finite(yb));
        if ya.len() < 2 || yb.len() < 2 {
            continue;
        }
        let m = margin.unwrap_or_else(|| default_margin(&ya, &yb));
        rows.push(EquivalenceRow {
            name: name.clone(),
            mean_a: mean_var(&ya).0,
            mean_b: mean_var(&yb).0,
            ttest: two_sample_ttest(&ya, &yb)?,
            tost: tost(&ya, &yb, m)?,
        });
    }
    Ok(rows)
}
