//! Unit-diagonal correlation through row-normalized Cholesky factors.
//!
//! Each free parameter `θ` maps to a partial correlation `z = tanh θ`. Row `r`
//! of `L` is filled left to right as `L[r][c] = z[r][c] * sqrt(1 - Σ_{c'<c} L[r][c']²)`
//! and closed with the positive remainder `L[r][r] = sqrt(1 - Σ_{c<r} L[r][c]²)`,
//! so every row has unit norm and `LLᵀ` is a correlation matrix. For a single
//! off-diagonal entry this is `L = [[1, 0], [A, sqrt(1 - A²)]]` with `A = tanh θ`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CholeskySpec {
    pub alternatives: usize,
    /// Alternative whose stochastic term is fixed to zero.
    pub base_alternative: usize,
}

impl CholeskySpec {
    pub fn new(alternatives: usize, base_alternative: usize) -> Result<Self> {
        let spec = CholeskySpec {
            alternatives,
            base_alternative,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alternatives < 2 {
            return Err(Error::config("correlated errors need at least two alternatives"));
        }
        if self.base_alternative >= self.alternatives {
            return Err(Error::config(format!(
                "base alternative {} outside 0..{}",
                self.base_alternative, self.alternatives
            )));
        }
        Ok(())
    }

    /// Size of `L`, i.e. `J - 1`.
    pub fn dim(&self) -> usize {
        self.alternatives - 1
    }

    pub fn num_free(&self) -> usize {
        let d = self.dim();
        d * (d - 1) / 2
    }

    /// Alternative index carried by each row of `L`.
    pub fn stochastic_alternatives(&self) -> Vec<usize> {
        (0..self.alternatives)
            .filter(|&j| j != self.base_alternative)
            .collect()
    }

    /// Names of the free parameters, `A{a}{b}` with 1-based alternative numbers.
    pub fn parameter_names(&self) -> Vec<String> {
        let alts = self.stochastic_alternatives();
        let mut names = Vec::with_capacity(self.num_free());
        for r in 1..self.dim() {
            for c in 0..r {
                names.push(format!("A{}{}", alts[c] + 1, alts[r] + 1));
            }
        }
        names
    }

    /// `L` from raw (unconstrained) parameters in the order of [`Self::parameter_names`].
    pub fn factor(&self, raw: &[f64]) -> Result<Matrix> {
        if raw.len() != self.num_free() {
            return Err(Error::shape("cholesky parameters", self.num_free(), raw.len()));
        }
        let z: Vec<f64> = raw.iter().map(|&t| libm::tanh(t)).collect();
        factor_from_partials(self.dim(), &z)
    }

    /// Accumulate `∂loss/∂θ` into `grad` given `∂loss/∂L` (entries above the diagonal ignored).
    pub fn backprop(&self, raw: &[f64], l: &Matrix, dl: &Matrix, grad: &mut [f64]) {
        let d = self.dim();
        let mut k0 = 0;
        for r in 1..d {
            let z: Vec<f64> = raw[k0..k0 + r].iter().map(|&t| libm::tanh(t)).collect();
            let mut remaining = 1.0;
            for c in 0..r {
                let sc = libm::sqrt(remaining);
                // Entry (r, c) through its own parameter.
                grad[k0 + c] += dl[(r, c)] * sc * (1.0 - z[c] * z[c]);
                // Later entries and the diagonal through the shrinking remainder.
                for later in c + 1..r {
                    grad[k0 + c] -= dl[(r, later)] * l[(r, later)] * z[c];
                }
                grad[k0 + c] -= dl[(r, r)] * l[(r, r)] * z[c];
                remaining *= 1.0 - z[c] * z[c];
            }
            k0 += r;
        }
    }
}

pub fn factor_from_partials(dim: usize, z: &[f64]) -> Result<Matrix> {
    if z.len() != dim * dim.saturating_sub(1) / 2 {
        return Err(Error::shape("partial correlations", dim * (dim - 1) / 2, z.len()));
    }
    let mut l = Matrix::zeros(dim, dim);
    if dim == 0 {
        return Ok(l);
    }
    l[(0, 0)] = 1.0;
    let mut k = 0;
    for r in 1..dim {
        let mut remaining = 1.0;
        for c in 0..r {
            let zc = z[k];
            k += 1;
            if !(zc.abs() < 1.0) {
                return Err(Error::Parameterization(format!(
                    "partial correlation ({r},{c}) = {zc} is not inside (-1, 1)"
                )));
            }
            l[(r, c)] = zc * libm::sqrt(remaining);
            remaining *= 1.0 - zc * zc;
        }
        if !(remaining > 0.0) {
            return Err(Error::Parameterization(format!(
                "row {r} has no positive diagonal remainder"
            )));
        }
        l[(r, r)] = libm::sqrt(remaining);
    }
    Ok(l)
}

/// `L` from a [`ParameterSet`] holding the spec's named raw parameters.
pub fn build_cholesky(spec: &CholeskySpec, params: &ParameterSet) -> Result<Matrix> {
    let raw = spec
        .parameter_names()
        .iter()
        .map(|n| {
            params
                .get(n)
                .ok_or_else(|| Error::Schema(format!("missing correlation parameter `{n}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    spec.factor(&raw)
}

/// Off-diagonal entries of `LLᵀ` in parameter order.
pub fn correlations(l: &Matrix) -> Vec<f64> {
    let psi = l.gram();
    let mut out = Vec::new();
    for r in 1..l.rows() {
        for c in 0..r {
            out.push(psi[(r, c)]);
        }
    }
    out
}

/// Raw parameters reproducing a given unit-diagonal correlation matrix.
pub fn raw_from_correlation(psi: &Matrix) -> Result<Vec<f64>> {
    let d = psi.rows();
    let mut l = Matrix::zeros(d, d);
    for r in 0..d {
        for c in 0..=r {
            let s: f64 = (0..c).map(|k| l[(r, k)] * l[(c, k)]).sum();
            if r == c {
                let v = psi[(r, r)] - s;
                if !(v > 0.0) {
                    return Err(Error::Parameterization(
                        "correlation matrix is not positive definite".into(),
                    ));
                }
                l[(r, r)] = libm::sqrt(v);
            } else {
                l[(r, c)] = (psi[(r, c)] - s) / l[(c, c)];
            }
        }
    }
    let mut raw = Vec::new();
    for r in 1..d {
        let mut remaining = 1.0;
        for c in 0..r {
            let z = l[(r, c)] / libm::sqrt(remaining);
            raw.push(libm::atanh(z));
            remaining -= l[(r, c)] * l[(r, c)];
        }
    }
    Ok(raw)
}
