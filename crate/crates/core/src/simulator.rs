//! Smoothed accept-reject probability simulation.
//!
//! For each of `Q` replications the error draws are added to the deterministic
//! utilities and the smoothed logit `S_j = exp(U_j/λ) / Σ_t exp(U_t/λ)` turns
//! the result into an (almost) one-hot vector. The simulated probability is
//! the column mean of the `Q × J` replication matrix.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::normalize_in_place;
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// One set of draws per situation for the whole fit.
    #[default]
    #[serde(alias = "fixed", alias = "crn")]
    FixedCommonRandomNumbers,
    /// Fresh draws every epoch; evaluation still uses the fixed set.
    #[serde(alias = "resample")]
    ResampleEachEpoch,
}

impl DrawMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" | "fixed_common_random_numbers" | "crn" => {
                Some(DrawMode::FixedCommonRandomNumbers)
            }
            "resample" | "resample_each_epoch" => Some(DrawMode::ResampleEachEpoch),
            _ => None,
        }
    }
}

fn default_q() -> usize {
    500
}

fn default_lambda() -> f64 {
    1e-4
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub draw_mode: DrawMode,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            q: default_q(),
            lambda: default_lambda(),
            seed: 0,
            draw_mode: DrawMode::default(),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::config("Q must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain {
                what: "smoothing scale lambda",
                value: self.lambda,
            });
        }
        Ok(())
    }
}

/// Correlated differenced errors: the base alternative has no stochastic term,
/// the others receive `Lε` in alternative order.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelatedErrors {
    pub factor: Matrix,
    pub base: usize,
}

/// Mapping from draw columns to alternatives.
#[derive(Clone, Copy, Debug)]
pub enum ErrorStructure<'a> {
    Independent,
    Correlated(&'a CorrelatedErrors),
}

impl ErrorStructure<'_> {
    pub fn draw_columns(&self, alternatives: usize) -> usize {
        match self {
            ErrorStructure::Independent => alternatives,
            ErrorStructure::Correlated(c) => c.factor.rows(),
        }
    }

    fn base(&self) -> usize {
        match self {
            ErrorStructure::Independent => 0,
            ErrorStructure::Correlated(c) => c.base,
        }
    }

    fn check(&self, alternatives: usize) -> Result<()> {
        if let ErrorStructure::Correlated(c) = self {
            if c.factor.rows() + 1 != alternatives || c.factor.cols() != c.factor.rows() {
                return Err(Error::shape(
                    "correlation factor size",
                    alternatives - 1,
                    c.factor.rows(),
                ));
            }
            if c.base >= alternatives {
                return Err(Error::shape("base alternative", alternatives, c.base));
            }
        }
        Ok(())
    }
}

/// Smoothed logit with max-subtraction; sums to one.
pub fn smoothed_logit(utilities: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Domain {
            what: "smoothing scale lambda",
            value: lambda,
        });
    }
    if utilities.is_empty() {
        return Err(Error::shape("utilities", 1, 0));
    }
    let mut out = vec![0.0; utilities.len()];
    smoothed_logit_into(utilities, 1.0 / lambda, None, &mut out);
    Ok(out)
}

/// Below this exponent a term is under 2e-22 and cannot change a sum that
/// already contains 1.
const UNDERFLOW: f64 = -50.0;

#[inline(always)]
pub(crate) fn smoothed_logit_into(
    u: &[f64],
    inv_lambda: f64,
    available: Option<&[bool]>,
    out: &mut [f64],
) {
    if let ([u0, u1], [o0, o1], None) = (u, &mut *out, available) {
        // Same arithmetic as the general path below, without the loops.
        let (hi, lo) = if u1 > u0 { (*u1, *u0) } else { (*u0, *u1) };
        let z = (lo - hi) * inv_lambda;
        let e = if z > UNDERFLOW { libm::exp(z) } else { 0.0 };
        let inv = 1.0 / (1.0 + e);
        let (a, b) = (inv, e * inv);
        if u1 > u0 {
            (*o0, *o1) = (b, a);
        } else {
            (*o0, *o1) = (a, b);
        }
        return;
    }
    let mut best = usize::MAX;
    let mut m = f64::NEG_INFINITY;
    for (j, &x) in u.iter().enumerate() {
        if available.is_none_or(|a| a[j]) && (best == usize::MAX || x > m) {
            m = x;
            best = j;
        }
    }
    let mut total = 0.0;
    for (j, (o, &x)) in out.iter_mut().zip(u).enumerate() {
        let z = (x - m) * inv_lambda;
        *o = if j == best {
            1.0
        } else if z > UNDERFLOW && available.is_none_or(|a| a[j]) {
            libm::exp(z)
        } else {
            0.0
        };
        total += *o;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// The winning index when every other available term of the smoothed logit
/// underflows, i.e. when the replication row is exactly one-hot.
#[inline(always)]
fn saturated_winner(u: &[f64], inv_lambda: f64, available: Option<&[bool]>) -> Option<usize> {
    let mut best = usize::MAX;
    let (mut m, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (j, &x) in u.iter().enumerate() {
        if !available.is_none_or(|a| a[j]) {
            continue;
        }
        if best == usize::MAX || x > m {
            second = m;
            m = x;
            best = j;
        } else if x > second {
            second = x;
        }
    }
    ((second - m) * inv_lambda <= UNDERFLOW).then_some(best)
}

/// Key of the draws for a situation; `epoch` is used only when resampling.
#[inline]
pub fn situation_key(seed: u64, situation: u64, mode: DrawMode, epoch: Option<u64>) -> StreamKey {
    let key = StreamKey::new(seed).split(situation);
    match (mode, epoch) {
        (DrawMode::ResampleEachEpoch, Some(e)) => key.split(e.wrapping_add(1)),
        _ => key,
    }
}

/// Reusable buffers for one simulation call.
#[derive(Clone, Debug, Default)]
pub struct SimScratch {
    w: Vec<f64>,
    u: Vec<f64>,
    s: Vec<f64>,
    e: Vec<f64>,
    acc: Vec<f64>,
    acc_l: Vec<f64>,
}

impl SimScratch {
    fn prepare(&mut self, j: usize, d: usize) {
        self.w.resize(j, 0.0);
        self.u.resize(j, 0.0);
        self.s.resize(j, 0.0);
        self.e.resize(d, 0.0);
        self.acc.clear();
        self.acc.resize(j, 0.0);
        self.acc_l.clear();
        self.acc_l.resize(d * d, 0.0);
    }
}

/// Per-situation simulation engine.
#[derive(Clone, Copy, Debug)]
pub struct Engine<'a> {
    pub structure: ErrorStructure<'a>,
    pub lambda: f64,
}

impl Engine<'_> {
    #[inline(always)]
    fn stochastic_utilities(&self, w: &[f64], raw: &[f64], u: &mut [f64], e: &mut [f64]) {
        match self.structure {
            ErrorStructure::Independent => {
                for ((u, &w), &r) in u.iter_mut().zip(w).zip(raw) {
                    *u = w + r;
                }
            }
            ErrorStructure::Correlated(c) => {
                crate::distributions::lower_mul(&c.factor, raw, e);
                let mut r = 0;
                for j in 0..w.len() {
                    if j == c.base {
                        u[j] = w[j];
                    } else {
                        u[j] = w[j] + e[r];
                        r += 1;
                    }
                }
            }
        }
    }

    fn normalized(&self, v: &[f64], w: &mut [f64]) {
        w.copy_from_slice(v);
        normalize_in_place(w, self.structure.base());
    }

    /// Fill the `Q × J` replication matrix rows into `out` (row-major).
    pub fn replications_into(
        &self,
        v: &[f64],
        raw: &[f64],
        available: Option<&[bool]>,
        out: &mut [f64],
        s: &mut SimScratch,
    ) {
        let j = v.len();
        let d = self.structure.draw_columns(j);
        s.prepare(j, d);
        self.normalized(v, &mut s.w);
        let inv = 1.0 / self.lambda;
        for (q, row) in out.chunks_exact_mut(j).enumerate() {
            self.stochastic_utilities(&s.w, &raw[q * d..(q + 1) * d], &mut s.u, &mut s.e);
            smoothed_logit_into(&s.u, inv, available, row);
        }
    }

    /// Column means of the replication matrix.
    pub fn probabilities_into(
        &self,
        v: &[f64],
        raw: &[f64],
        available: Option<&[bool]>,
        out: &mut [f64],
        s: &mut SimScratch,
    ) {
        let j = v.len();
        let d = self.structure.draw_columns(j);
        let q_count = raw.len() / d;
        s.prepare(j, d);
        self.normalized(v, &mut s.w);
        let inv = 1.0 / self.lambda;
        out.iter_mut().for_each(|o| *o = 0.0);
        for q in 0..q_count {
            self.stochastic_utilities(&s.w, &raw[q * d..(q + 1) * d], &mut s.u, &mut s.e);
            smoothed_logit_into(&s.u, inv, available, &mut s.s);
            for (o, &p) in out.iter_mut().zip(&s.s) {
                *o += p;
            }
        }
        let scale = 1.0 / q_count as f64;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    /// Floored negative log-probability of the chosen alternative and its gradient.
    ///
    /// Writes `∂/∂V` into `dv` and, for correlated errors, `∂/∂L` (row-major
    /// `d × d`) into `dl`. Both are zero when the probability is floored.
    /// Returns `(loss, simulated P_y)`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_grad(
        &self,
        v: &[f64],
        raw: &[f64],
        available: Option<&[bool]>,
        chosen: usize,
        floor: f64,
        dv: &mut [f64],
        dl: Option<&mut [f64]>,
        s: &mut SimScratch,
    ) -> (f64, f64) {
        let j_count = v.len();
        let d = self.structure.draw_columns(j_count);
        let q_count = raw.len() / d;
        s.prepare(j_count, d);
        self.normalized(v, &mut s.w);
        let inv = 1.0 / self.lambda;
        if let (ErrorStructure::Independent, 2, None) = (self.structure, j_count, available) {
            return self.binary_loss_grad(raw, chosen, floor, dv, s);
        }
        let p_sum = match j_count {
            2 => self.accumulate_fixed::<2>(raw, available, chosen, s),
            3 => self.accumulate_fixed::<3>(raw, available, chosen, s),
            4 => self.accumulate_fixed::<4>(raw, available, chosen, s),
            _ => self.accumulate(raw, available, chosen, s),
        };
        let p = p_sum / q_count as f64;
        if p < floor {
            dv.iter_mut().for_each(|x| *x = 0.0);
            if let Some(dl) = dl {
                dl.iter_mut().for_each(|x| *x = 0.0);
            }
            return (-libm::log(floor), p);
        }
        let coef = -inv / (p * q_count as f64);
        for (o, &a) in dv.iter_mut().zip(&s.acc) {
            *o = coef * a;
        }
        if let Some(dl) = dl {
            for (o, &a) in dl.iter_mut().zip(&s.acc_l) {
                *o = coef * a;
            }
        }
        (-libm::log(p), p)
    }
}

impl Engine<'_> {
    /// `Σ_q S_qy`, accumulating `Σ_q S_qy (δ_yj - S_qj)` into `s.acc` and the
    /// matching error-weighted sums into `s.acc_l`.
    fn accumulate(&self, raw: &[f64], available: Option<&[bool]>, chosen: usize, s: &mut SimScratch) -> f64 {
        let j_count = s.w.len();
        let d = self.structure.draw_columns(j_count);
        let q_count = raw.len() / d;
        let inv = 1.0 / self.lambda;
        let mut p_sum = 0.0;
        for q in 0..q_count {
            let eps = &raw[q * d..(q + 1) * d];
            self.stochastic_utilities(&s.w, eps, &mut s.u, &mut s.e);
            if let Some(best) = saturated_winner(&s.u, inv, available) {
                // One-hot replication: contributes to P_y but not to the gradient.
                if best == chosen {
                    p_sum += 1.0;
                }
                continue;
            }
            smoothed_logit_into(&s.u, inv, available, &mut s.s);
            let sy = s.s[chosen];
            p_sum += sy;
            if sy == 0.0 {
                continue;
            }
            for (a, &sj) in s.acc.iter_mut().zip(&s.s) {
                *a -= sy * sj;
            }
            s.acc[chosen] += sy;
            if let ErrorStructure::Correlated(c) = self.structure {
                let mut r = 0;
                for jj in 0..j_count {
                    if jj == c.base {
                        continue;
                    }
                    let g = sy * (f64::from(u8::from(jj == chosen)) - s.s[jj]);
                    if g != 0.0 {
                        let row = &mut s.acc_l[r * d..r * d + r + 1];
                        for (a, &ec) in row.iter_mut().zip(eps) {
                            *a += g * ec;
                        }
                    }
                    r += 1;
                }
            }
        }
        p_sum
    }

    /// [`Self::accumulate`] with the alternative count fixed at compile time.
    #[inline(always)]
    fn accumulate_fixed<const J: usize>(
        &self,
        raw: &[f64],
        available: Option<&[bool]>,
        chosen: usize,
        s: &mut SimScratch,
    ) -> f64 {
        let inv = 1.0 / self.lambda;
        let w: [f64; J] = core::array::from_fn(|j| s.w[j]);
        let avail: [bool; J] = core::array::from_fn(|j| available.is_none_or(|a| a[j]));
        let mut l = [[0.0; J]; J];
        let (d, base) = match self.structure {
            ErrorStructure::Independent => (J, usize::MAX),
            ErrorStructure::Correlated(c) => {
                for (r, row) in l.iter_mut().enumerate().take(J - 1) {
                    row[..=r].copy_from_slice(&c.factor.row(r)[..=r]);
                }
                (J - 1, c.base)
            }
        };
        let mut acc = [0.0; J];
        let mut acc_l = [[0.0; J]; J];
        let mut p_sum = 0.0;
        for eps in raw.chunks_exact(d) {
            let mut u = w;
            if base == usize::MAX {
                for j in 0..J {
                    u[j] += eps[j];
                }
            } else {
                let mut r = 0;
                for j in 0..J {
                    if j != base {
                        let mut e = 0.0;
                        for c in 0..=r {
                            e += l[r][c] * eps[c];
                        }
                        u[j] += e;
                        r += 1;
                    }
                }
            }
            let mut best = usize::MAX;
            let (mut m, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in 0..J {
                if !avail[j] {
                    continue;
                }
                if best == usize::MAX || u[j] > m {
                    second = m;
                    m = u[j];
                    best = j;
                } else if u[j] > second {
                    second = u[j];
                }
            }
            if (second - m) * inv <= UNDERFLOW {
                if best == chosen {
                    p_sum += 1.0;
                }
                continue;
            }
            let mut o = [0.0; J];
            let mut total = 0.0;
            for j in 0..J {
                let z = (u[j] - m) * inv;
                o[j] = if j == best {
                    1.0
                } else if z > UNDERFLOW && avail[j] {
                    libm::exp(z)
                } else {
                    0.0
                };
                total += o[j];
            }
            let it = 1.0 / total;
            for oj in o.iter_mut() {
                *oj *= it;
            }
            let sy = o[chosen];
            p_sum += sy;
            if sy == 0.0 {
                continue;
            }
            for j in 0..J {
                acc[j] -= sy * o[j];
            }
            acc[chosen] += sy;
            if base != usize::MAX {
                let mut r = 0;
                for j in 0..J {
                    if j == base {
                        continue;
                    }
                    let g = sy * (f64::from(u8::from(j == chosen)) - o[j]);
                    if g != 0.0 {
                        for c in 0..=r {
                            acc_l[r][c] += g * eps[c];
                        }
                    }
                    r += 1;
                }
            }
        }
        s.acc.copy_from_slice(&acc);
        if base != usize::MAX {
            for r in 0..d {
                s.acc_l[r * d..(r + 1) * d].copy_from_slice(&acc_l[r][..d]);
            }
        }
        p_sum
    }

    /// Two independent alternatives: only the utility difference matters, and
    /// `∂P_y/∂V_y = -∂P_y/∂V_o = Σ_q S_qy (1 - S_qy) / (Qλ)`.
    fn binary_loss_grad(&self, raw: &[f64], chosen: usize, floor: f64, dv: &mut [f64], s: &SimScratch) -> (f64, f64) {
        let inv = 1.0 / self.lambda;
        let other = 1 - chosen;
        let d = s.w[chosen] - s.w[other];
        let (mut p_sum, mut slope) = (0.0, 0.0);
        for e in raw.chunks_exact(2) {
            let t = (d + (e[chosen] - e[other])) * inv;
            let a = libm::fabs(t);
            if a < -UNDERFLOW {
                let x = libm::exp(-a);
                let r = 1.0 / (1.0 + x);
                let sy = if t >= 0.0 { r } else { x * r };
                p_sum += sy;
                slope += x * r * r;
            } else if t > 0.0 {
                p_sum += 1.0;
            }
        }
        let q_count = (raw.len() / 2) as f64;
        let p = p_sum / q_count;
        if p < floor {
            dv.iter_mut().for_each(|x| *x = 0.0);
            return (-libm::log(floor), p);
        }
        let g = -inv * slope / (p * q_count);
        dv[chosen] = g;
        dv[other] = -g;
        (-libm::log(p), p)
    }
}

/// Raw draws for one situation (`Q × D`, row-major).
#[inline]
pub fn situation_draws(dist: &ErrorDistribution, key: StreamKey, q: usize, d: usize, out: &mut Vec<f64>) {
    out.resize(q * d, 0.0);
    dist.fill_keyed(key, out);
}

fn single_situation<'c>(
    v: &[f64],
    dist: ErrorDistribution,
    chol: Option<&'c CorrelatedErrors>,
    cfg: &SimulatorConfig,
) -> Result<(ErrorStructure<'c>, Vec<f64>)> {
    cfg.validate()?;
    dist.validate()?;
    if v.len() < 2 {
        return Err(Error::shape("utilities", 2, v.len()));
    }
    let structure = chol.map_or(ErrorStructure::Independent, ErrorStructure::Correlated);
    structure.check(v.len())?;
    let d = structure.draw_columns(v.len());
    let mut raw = Vec::new();
    situation_draws(&dist, situation_key(cfg.seed, 0, cfg.draw_mode, None), cfg.q, d, &mut raw);
    Ok((structure, raw))
}

/// `Q × J` replication matrix for one choice situation (situation index 0 of `cfg.seed`).
pub fn replication_matrix(
    v: &[f64],
    dist: ErrorDistribution,
    chol: Option<&CorrelatedErrors>,
    cfg: &SimulatorConfig,
) -> Result<Matrix> {
    let (structure, raw) = single_situation(v, dist, chol, cfg)?;
    let engine = Engine {
        structure,
        lambda: cfg.lambda,
    };
    let mut out = vec![0.0; cfg.q * v.len()];
    engine.replications_into(v, &raw, None, &mut out, &mut SimScratch::default());
    Matrix::from_vec(cfg.q, v.len(), out)
}

/// Simulated choice probabilities for one situation.
pub fn simulate_probabilities(
    v: &[f64],
    dist: ErrorDistribution,
    chol: Option<&CorrelatedErrors>,
    cfg: &SimulatorConfig,
) -> Result<Vec<f64>> {
    let (structure, raw) = single_situation(v, dist, chol, cfg)?;
    let engine = Engine {
        structure,
        lambda: cfg.lambda,
    };
    let mut out = vec![0.0; v.len()];
    engine.probabilities_into(v, &raw, None, &mut out, &mut SimScratch::default());
    Ok(out)
}
