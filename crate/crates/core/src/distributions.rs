//! Error-term kernels for the stochastic utility layer.
//!
//! All kernels are sampled by inverse transform from one uniform per cell, so
//! a draw matrix is a pure function of `(key, rows, cols, distribution)`.
//! Exponential and Pareto draws are used raw (not mean-centred).
//!
//! `Pareto { scale: 1, shape: 1 }` has infinite mean and variance; it is
//! accepted, but simulated probabilities under it converge slowly in `Q`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::StreamKey;
use crate::special;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum ErrorDistribution {
    Gumbel { location: f64, scale: f64 },
    Normal { mean: f64, std: f64 },
    Exponential { rate: f64 },
    Pareto { scale: f64, shape: f64 },
}

impl ErrorDistribution {
    pub const fn gumbel() -> Self {
        ErrorDistribution::Gumbel {
            location: 0.0,
            scale: 1.0,
        }
    }

    pub const fn normal() -> Self {
        ErrorDistribution::Normal { mean: 0.0, std: 1.0 }
    }

    pub const fn exponential() -> Self {
        ErrorDistribution::Exponential { rate: 1.0 }
    }

    pub const fn pareto() -> Self {
        ErrorDistribution::Pareto {
            scale: 1.0,
            shape: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ErrorDistribution::Gumbel { .. } => "gumbel",
            ErrorDistribution::Normal { .. } => "normal",
            ErrorDistribution::Exponential { .. } => "exponential",
            ErrorDistribution::Pareto { .. } => "pareto",
        }
    }

    /// Default-parameter kernel by name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gumbel" => Some(Self::gumbel()),
            "normal" => Some(Self::normal()),
            "exponential" => Some(Self::exponential()),
            "pareto" => Some(Self::pareto()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (what, v) = match *self {
            ErrorDistribution::Gumbel { location, scale } => {
                if !location.is_finite() {
                    return Err(Error::Domain {
                        what: "gumbel location",
                        value: location,
                    });
                }
                ("gumbel scale", scale)
            }
            ErrorDistribution::Normal { mean, std } => {
                if !mean.is_finite() {
                    return Err(Error::Domain {
                        what: "normal mean",
                        value: mean,
                    });
                }
                ("normal std", std)
            }
            ErrorDistribution::Exponential { rate } => ("exponential rate", rate),
            ErrorDistribution::Pareto { scale, shape } => {
                if !(shape > 0.0 && shape.is_finite()) {
                    return Err(Error::Domain {
                        what: "pareto shape",
                        value: shape,
                    });
                }
                ("pareto scale", scale)
            }
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain { what, value: v })
        }
    }

    /// `F⁻¹(u)` for `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain {
                what: "quantile probability",
                value: u,
            });
        }
        Ok(self.quantile_unchecked(u))
    }

    #[inline(always)]
    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            ErrorDistribution::Gumbel { location, scale } => {
                location - scale * libm::log(-libm::log(u))
            }
            ErrorDistribution::Normal { mean, std } => mean + std * special::normal_quantile(u),
            ErrorDistribution::Exponential { rate } => -libm::log1p(-u) / rate,
            ErrorDistribution::Pareto { scale, shape } => {
                scale * libm::exp(-libm::log1p(-u) / shape)
            }
        }
    }

    /// Analytic mean, `None` when it does not exist.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            ErrorDistribution::Gumbel { location, scale } => {
                Some(location + scale * special::EULER_MASCHERONI)
            }
            ErrorDistribution::Normal { mean, .. } => Some(mean),
            ErrorDistribution::Exponential { rate } => Some(1.0 / rate),
            ErrorDistribution::Pareto { scale, shape } => {
                (shape > 1.0).then(|| shape * scale / (shape - 1.0))
            }
        }
    }

    /// Analytic variance, `None` when infinite.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            ErrorDistribution::Gumbel { scale, .. } => {
                Some(core::f64::consts::PI * core::f64::consts::PI / 6.0 * scale * scale)
            }
            ErrorDistribution::Normal { std, .. } => Some(std * std),
            ErrorDistribution::Exponential { rate } => Some(1.0 / (rate * rate)),
            ErrorDistribution::Pareto { scale, shape } => (shape > 2.0)
                .then(|| scale * scale * shape / ((shape - 1.0) * (shape - 1.0) * (shape - 2.0))),
        }
    }

    /// Fill `out` with draws; cell `c` uses counter `c` of `key`.
    pub fn fill_keyed(&self, key: StreamKey, out: &mut [f64]) {
        for (c, v) in out.iter_mut().enumerate() {
            *v = self.quantile_unchecked(key.uniform_at(c as u64));
        }
    }
}

impl Default for ErrorDistribution {
    fn default() -> Self {
        Self::gumbel()
    }
}

/// `Q × D` matrix of error draws with the seed and kernel that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawMatrix {
    values: Matrix,
    seed: u64,
    distribution: ErrorDistribution,
}

impl DrawMatrix {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> ErrorDistribution {
        self.distribution
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }
}

/// Independent draws; cell `(q, d)` is counter `q * D + d` of the seed's stream.
pub fn sample(dist: ErrorDistribution, rows: usize, cols: usize, seed: u64) -> Result<DrawMatrix> {
    dist.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::config("draw matrix needs at least one row and column"));
    }
    let mut data = alloc::vec![0.0; rows * cols];
    dist.fill_keyed(StreamKey::new(seed), &mut data);
    Ok(DrawMatrix {
        values: Matrix::from_vec(rows, cols, data)?,
        seed,
        distribution: dist,
    })
}

/// Replace every row `ε` by `Lε`.
pub fn correlate(draws: &DrawMatrix, chol: &Matrix) -> Result<DrawMatrix> {
    if chol.rows() != chol.cols() {
        return Err(Error::shape("cholesky factor columns", chol.rows(), chol.cols()));
    }
    if draws.cols() != chol.rows() {
        return Err(Error::shape("draw columns vs cholesky", chol.rows(), draws.cols()));
    }
    if !chol.is_lower_triangular() {
        return Err(Error::Parameterization(
            "correlation factor must be lower triangular".into(),
        ));
    }
    let d = draws.cols();
    let mut data = Vec::with_capacity(draws.rows() * d);
    let mut buf = alloc::vec![0.0; d];
    for q in 0..draws.rows() {
        lower_mul(chol, draws.values.row(q), &mut buf);
        data.extend_from_slice(&buf);
    }
    Ok(DrawMatrix {
        values: Matrix::from_vec(draws.rows(), d, data)?,
        seed: draws.seed,
        distribution: draws.distribution,
    })
}

/// `out = L x` for lower-triangular `L`.
#[inline]
pub(crate) fn lower_mul(l: &Matrix, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = l.row(r);
        let mut s = 0.0;
        for c in 0..=r {
            s += row[c] * x[c];
        }
        *o = s;
    }
}
