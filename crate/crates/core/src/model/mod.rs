//! Deterministic utility specifications and the parameters they own.

mod cholesky;
mod linear;
pub mod network;
mod nonlinear;
mod params;

pub use cholesky::{
    build_cholesky, correlations, factor_from_partials, raw_from_correlation, CholeskySpec,
};
pub use linear::{linear_utilities, LinearModel, LinearUtilitySpec, UtilityTerm, Variable};
pub use nonlinear::{NonlinearModel, NonlinearScratch, NonlinearUtilitySpec};
pub use params::{NamedValue, ParameterSet};

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Obs};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UtilitySpec {
    Linear(LinearUtilitySpec),
    Nonlinear(NonlinearUtilitySpec),
}

impl UtilitySpec {
    pub fn alternatives(&self) -> usize {
        match self {
            UtilitySpec::Linear(s) => s.alternatives,
            UtilitySpec::Nonlinear(s) => s.alternatives,
        }
    }

    pub fn wants_standardized_inputs(&self) -> bool {
        matches!(self, UtilitySpec::Nonlinear(s) if s.standardize)
    }

    pub fn bind(&self, data: &Dataset) -> Result<BoundUtility> {
        Ok(match self {
            UtilitySpec::Linear(s) => BoundUtility::Linear(s.bind(data)?),
            UtilitySpec::Nonlinear(s) => BoundUtility::Nonlinear(s.bind(data)?),
        })
    }
}

/// A utility specification resolved against a dataset schema.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundUtility {
    Linear(LinearModel),
    Nonlinear(NonlinearModel),
}

#[derive(Clone, Debug, Default)]
pub struct UtilityScratch {
    nonlinear: NonlinearScratch,
}

impl BoundUtility {
    pub fn parameter_names(&self) -> &[String] {
        match self {
            BoundUtility::Linear(m) => m.parameter_names(),
            BoundUtility::Nonlinear(m) => m.parameter_names(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            BoundUtility::Linear(m) => m.num_params(),
            BoundUtility::Nonlinear(m) => m.num_params(),
        }
    }

    pub fn alternatives(&self) -> usize {
        match self {
            BoundUtility::Linear(m) => m.alternatives(),
            BoundUtility::Nonlinear(m) => m.alternatives(),
        }
    }

    /// Linear coefficients start at zero; network weights use rectifier-scaled normals.
    pub fn initial_values(&self, seed: u64) -> Vec<f64> {
        match self {
            BoundUtility::Linear(m) => alloc::vec![0.0; m.num_params()],
            BoundUtility::Nonlinear(m) => m.initial_values(seed),
        }
    }

    #[inline]
    pub fn utilities_into(
        &self,
        params: &[f64],
        obs: &Obs<'_>,
        out: &mut [f64],
        scratch: &mut UtilityScratch,
    ) {
        match self {
            BoundUtility::Linear(m) => m.utilities_into(params, obs, out),
            BoundUtility::Nonlinear(m) => {
                m.utilities_into(params, obs, out, &mut scratch.nonlinear)
            }
        }
    }

    /// Accumulate `Σ_j dv_j ∂V_j/∂θ`; follows `utilities_into` on the same observation.
    #[inline]
    pub fn backward(
        &self,
        params: &[f64],
        obs: &Obs<'_>,
        dv: &[f64],
        grad: &mut [f64],
        scratch: &mut UtilityScratch,
    ) {
        match self {
            BoundUtility::Linear(m) => m.backward(obs, dv, grad),
            BoundUtility::Nonlinear(m) => m.backward(params, dv, grad, &mut scratch.nonlinear),
        }
    }
}

/// `U - U[base]`, exact at the base entry.
pub fn normalize_to_base(utilities: &[f64], base: usize) -> Result<Vec<f64>> {
    if base >= utilities.len() {
        return Err(Error::shape("base alternative", utilities.len(), base));
    }
    let mut out = utilities.to_vec();
    normalize_in_place(&mut out, base);
    Ok(out)
}

#[inline]
pub(crate) fn normalize_in_place(utilities: &mut [f64], base: usize) {
    let b = utilities[base];
    for u in utilities.iter_mut() {
        *u -= b;
    }
    utilities[base] = 0.0;
}
