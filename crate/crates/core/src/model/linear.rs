use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::data::{Dataset, Obs};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variable {
    /// Alternative-specific constant.
    Constant,
    /// Attribute of the alternative the term belongs to.
    Attribute(String),
    /// Person-level attribute.
    Shared(String),
}

/// One `coefficient × variable` term; the same slot in several alternatives is a generic coefficient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTerm", into = "RawTerm")]
pub struct UtilityTerm {
    pub slot: String,
    pub variable: Variable,
}

#[derive(Serialize, Deserialize)]
struct RawTerm {
    slot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shared: Option<String>,
}

impl TryFrom<RawTerm> for UtilityTerm {
    type Error = Error;
    fn try_from(raw: RawTerm) -> Result<Self> {
        let variable = match (raw.attribute, raw.shared) {
            (None, None) => Variable::Constant,
            (Some(a), None) => Variable::Attribute(a),
            (None, Some(s)) => Variable::Shared(s),
            (Some(_), Some(_)) => {
                return Err(Error::config(format!(
                    "term `{}` names both an attribute and a shared variable",
                    raw.slot
                )))
            }
        };
        Ok(UtilityTerm {
            slot: raw.slot,
            variable,
        })
    }
}

impl From<UtilityTerm> for RawTerm {
    fn from(t: UtilityTerm) -> Self {
        let (attribute, shared) = match t.variable {
            Variable::Constant => (None, None),
            Variable::Attribute(a) => (Some(a), None),
            Variable::Shared(s) => (None, Some(s)),
        };
        RawTerm {
            slot: t.slot,
            attribute,
            shared,
        }
    }
}

impl UtilityTerm {
    pub fn constant(slot: &str) -> Self {
        UtilityTerm {
            slot: slot.to_string(),
            variable: Variable::Constant,
        }
    }

    pub fn attribute(slot: &str, name: &str) -> Self {
        UtilityTerm {
            slot: slot.to_string(),
            variable: Variable::Attribute(name.to_string()),
        }
    }

    pub fn shared(slot: &str, name: &str) -> Self {
        UtilityTerm {
            slot: slot.to_string(),
            variable: Variable::Shared(name.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearUtilitySpec {
    pub alternatives: usize,
    /// Terms of each alternative's deterministic utility.
    pub terms: Vec<Vec<UtilityTerm>>,
    /// Alternative without a free constant.
    #[serde(default)]
    pub base_alternative: usize,
}

impl LinearUtilitySpec {
    /// Generic coefficients `beta_<attr>` on the same attribute in every alternative.
    pub fn generic(alternatives: usize, attributes: &[&str]) -> Self {
        let row: Vec<UtilityTerm> = attributes
            .iter()
            .map(|a| UtilityTerm::attribute(&format!("beta_{a}"), a))
            .collect();
        LinearUtilitySpec {
            alternatives,
            terms: alloc::vec![row; alternatives],
            base_alternative: alternatives - 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.len() != self.alternatives {
            return Err(Error::shape(
                "utility term lists",
                self.alternatives,
                self.terms.len(),
            ));
        }
        if self.base_alternative >= self.alternatives {
            return Err(Error::config(format!(
                "base alternative {} outside 0..{}",
                self.base_alternative, self.alternatives
            )));
        }
        if let Some(t) = self.terms[self.base_alternative]
            .iter()
            .find(|t| t.variable == Variable::Constant)
        {
            return Err(Error::config(format!(
                "base alternative {} carries constant `{}`; its constant is fixed to 0",
                self.base_alternative, t.slot
            )));
        }
        Ok(())
    }

    /// Unique slots in order of first appearance.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for t in self.terms.iter().flatten() {
            if !names.contains(&t.slot) {
                names.push(t.slot.clone());
            }
        }
        names
    }

    pub fn bind(&self, data: &Dataset) -> Result<LinearModel> {
        self.validate()?;
        if data.alternatives() != self.alternatives {
            return Err(Error::shape(
                "dataset alternatives",
                self.alternatives,
                data.alternatives(),
            ));
        }
        let names = self.parameter_names();
        let mut terms = Vec::with_capacity(self.alternatives);
        for (j, list) in self.terms.iter().enumerate() {
            let mut bound = Vec::with_capacity(list.len());
            for t in list {
                let slot = names.iter().position(|n| *n == t.slot).unwrap_or(0);
                let source = match &t.variable {
                    Variable::Constant => Source::One,
                    Variable::Attribute(a) => {
                        Source::Attribute(data.attribute_index(j, a).ok_or_else(|| {
                            Error::Schema(format!(
                                "alternative {} has no attribute `{a}` (term `{}`)",
                                j, t.slot
                            ))
                        })?)
                    }
                    Variable::Shared(s) => Source::Shared(data.shared_index(s).ok_or_else(
                        || Error::Schema(format!("no shared attribute `{s}` (term `{}`)", t.slot)),
                    )?),
                };
                bound.push((slot, source));
            }
            terms.push(bound);
        }
        Ok(LinearModel { names, terms })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    One,
    Attribute(usize),
    Shared(usize),
}

/// A [`LinearUtilitySpec`] resolved against a dataset schema.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    names: Vec<String>,
    terms: Vec<Vec<(usize, Source)>>,
}

impl LinearModel {
    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_params(&self) -> usize {
        self.names.len()
    }

    pub fn alternatives(&self) -> usize {
        self.terms.len()
    }

    #[inline]
    fn value(obs: &Obs<'_>, j: usize, source: Source) -> f64 {
        match source {
            Source::One => 1.0,
            Source::Attribute(k) => obs.alt(j)[k],
            Source::Shared(r) => obs.shared()[r],
        }
    }

    /// `V_j = Σ_k β_k x_jk`.
    #[inline]
    pub fn utilities_into(&self, params: &[f64], obs: &Obs<'_>, out: &mut [f64]) {
        for (j, (list, o)) in self.terms.iter().zip(out.iter_mut()).enumerate() {
            *o = list
                .iter()
                .map(|&(slot, src)| params[slot] * Self::value(obs, j, src))
                .sum();
        }
    }

    /// Accumulate `Σ_j dv_j ∂V_j/∂β` into `grad`.
    #[inline]
    pub fn backward(&self, obs: &Obs<'_>, dv: &[f64], grad: &mut [f64]) {
        for (j, list) in self.terms.iter().enumerate() {
            let g = dv[j];
            if g == 0.0 {
                continue;
            }
            for &(slot, src) in list {
                grad[slot] += g * Self::value(obs, j, src);
            }
        }
    }

    pub fn utilities(&self, params: &ParameterSet, obs: &Obs<'_>) -> Result<Vec<f64>> {
        if params.len() != self.num_params() {
            return Err(Error::shape("linear parameters", self.num_params(), params.len()));
        }
        let mut out = alloc::vec![0.0; self.alternatives()];
        self.utilities_into(params.values(), obs, &mut out);
        Ok(out)
    }
}

/// Deterministic utilities of situation `i` under a linear specification.
pub fn linear_utilities(
    spec: &LinearUtilitySpec,
    params: &ParameterSet,
    data: &Dataset,
    i: usize,
) -> Result<Vec<f64>> {
    spec.bind(data)?.utilities(params, &data.obs(i))
}
