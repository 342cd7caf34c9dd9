//! Closed-form choice models and the plain neural classifier.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::estimation::{fit, fit_holdout, FitOptions, FitResult, ModelSpec};
use crate::model::{CholeskySpec, LinearUtilitySpec, UtilitySpec};
use crate::special::normal_cdf;

/// Multinomial logit probabilities `e^{V_j} / Σ_t e^{V_t}`.
pub fn mnl_probability(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| libm::exp(x - m)).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Binary probit probabilities with IID standard normal errors: `P₁ = Φ((V₁ - V₂)/√2)`.
pub fn binary_probit_probability(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != 2 {
        return Err(Error::config("binary probit requires exactly two alternatives"));
    }
    let p = normal_cdf((v[0] - v[1]) * core::f64::consts::FRAC_1_SQRT_2);
    Ok(vec![p, 1.0 - p])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    Mnl,
    BinaryProbit,
    PlainDnn { hidden: Vec<usize> },
}

impl BaselineKind {
    pub fn spec(&self, utility: &LinearUtilitySpec) -> ModelSpec {
        match self {
            BaselineKind::Mnl => ModelSpec::Mnl {
                utility: utility.clone(),
            },
            BaselineKind::BinaryProbit => ModelSpec::BinaryProbit {
                utility: utility.clone(),
            },
            BaselineKind::PlainDnn { hidden } => ModelSpec::PlainDnn {
                hidden: hidden.clone(),
            },
        }
    }
}

/// Fit a baseline; `utility` is ignored by the plain classifier.
pub fn fit_baseline(
    kind: &BaselineKind,
    utility: &LinearUtilitySpec,
    data: &Dataset,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit(&kind.spec(utility), data, opts)
}

/// Trinomial probit as the simulated estimator with standard normal errors
/// and a unit-diagonal correlation between the non-base alternatives.
pub fn trinomial_probit_spec(utility: &LinearUtilitySpec) -> Result<ModelSpec> {
    if utility.alternatives != 3 {
        return Err(Error::config("trinomial probit requires exactly three alternatives"));
    }
    Ok(ModelSpec::RumNn {
        utility: UtilitySpec::Linear(utility.clone()),
        error: ErrorDistribution::normal(),
        correlation: Some(CholeskySpec::new(3, utility.base_alternative)?),
    })
}

pub fn trinomial_probit_fit(
    utility: &LinearUtilitySpec,
    data: &Dataset,
    test: Option<&Dataset>,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_holdout(&trinomial_probit_spec(utility)?, data, test, opts)
}
