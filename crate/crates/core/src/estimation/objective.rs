//! Per-observation losses, gradients and probabilities for every model family.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::distributions::ErrorDistribution;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::network::{Mlp, MlpScratch};
use crate::model::{BoundUtility, CholeskySpec, LinearModel, UtilityScratch};
use crate::par;
use crate::simulator::{
    situation_draws, situation_key, CorrelatedErrors, DrawMode, Engine, ErrorStructure,
    SimScratch, SimulatorConfig,
};
use crate::special::{ln_normal_cdf, normal_cdf, normal_hazard_lower};

/// Largest draw cache kept in memory, in values.
const CACHE_LIMIT: usize = 1 << 25;

pub(crate) trait Objective: Sync {
    type Prepared: Sync;
    type Scratch: Send;

    fn data(&self) -> &Dataset;
    fn num_params(&self) -> usize;
    /// Length of the per-observation gradient accumulator.
    fn grad_len(&self) -> usize {
        self.num_params()
    }
    fn prepare(&self, params: &[f64]) -> Result<Self::Prepared>;
    fn scratch(&self) -> Self::Scratch;
    /// Negative log-probability of the observed choice of situation `i`,
    /// accumulating its gradient when `grad` is given.
    fn obs_loss(
        &self,
        prep: &Self::Prepared,
        params: &[f64],
        i: usize,
        epoch: Option<u64>,
        grad: Option<&mut [f64]>,
        s: &mut Self::Scratch,
    ) -> f64;
    /// Map the accumulator onto the parameter vector.
    fn finish_grad(&self, _prep: &Self::Prepared, _params: &[f64], acc: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&acc[..self.num_params()]);
    }
    fn probabilities(&self, prep: &Self::Prepared, params: &[f64], i: usize, out: &mut [f64], s: &mut Self::Scratch);
}

/// Summed loss and (optionally) gradient over `indices`, reduced in fixed chunk order.
pub(crate) fn loss_and_grad<O: Objective>(
    obj: &O,
    params: &[f64],
    indices: &[usize],
    epoch: Option<u64>,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let prep = obj.prepare(params)?;
    let glen = if want_grad { obj.grad_len() } else { 0 };
    let parts = par::map_chunks(indices.len(), par::CHUNK, |range| {
        let mut s = obj.scratch();
        let mut acc = vec![0.0; glen];
        let mut loss = 0.0;
        for &i in &indices[range] {
            let g = if want_grad { Some(&mut acc[..]) } else { None };
            loss += obj.obs_loss(&prep, params, i, epoch, g, &mut s);
        }
        (loss, acc)
    });
    let mut loss = 0.0;
    let mut acc = vec![0.0; glen];
    for (l, a) in parts {
        loss += l;
        for (t, x) in acc.iter_mut().zip(&a) {
            *t += x;
        }
    }
    let mut grad = vec![0.0; if want_grad { obj.num_params() } else { 0 }];
    if want_grad {
        obj.finish_grad(&prep, params, &acc, &mut grad);
    }
    Ok((loss, grad))
}

/// `N × J` probability matrix with evaluation draws.
pub(crate) fn probability_matrix<O: Objective>(obj: &O, params: &[f64], j: usize) -> Result<Matrix> {
    let prep = obj.prepare(params)?;
    let n = obj.data().len();
    let parts = par::map_chunks(n, par::CHUNK, |range| {
        let mut s = obj.scratch();
        let mut out = vec![0.0; range.len() * j];
        for (k, i) in range.enumerate() {
            obj.probabilities(&prep, params, i, &mut out[k * j..(k + 1) * j], &mut s);
        }
        out
    });
    Matrix::from_vec(n, j, parts.concat())
}

/// Raw error draws for every situation of one dataset.
pub(crate) struct DrawBank {
    dist: ErrorDistribution,
    seed: u64,
    mode: DrawMode,
    q: usize,
    d: usize,
    ids: Vec<u64>,
    cache: Option<Vec<f64>>,
}

impl DrawBank {
    pub(crate) fn new(dist: ErrorDistribution, cfg: &SimulatorConfig, d: usize, data: &Dataset) -> Self {
        let mut bank = DrawBank {
            dist,
            seed: cfg.seed,
            mode: cfg.draw_mode,
            q: cfg.q,
            d,
            ids: data.ids().to_vec(),
            cache: None,
        };
        let per = cfg.q * d;
        if per.saturating_mul(data.len()) <= CACHE_LIMIT {
            let parts = par::map_chunks(data.len(), par::CHUNK, |range| {
                let mut out = Vec::with_capacity(range.len() * per);
                let mut buf = Vec::new();
                for i in range {
                    bank.fill(i, None, &mut buf);
                    out.extend_from_slice(&buf);
                }
                out
            });
            bank.cache = Some(parts.concat());
        }
        bank
    }

    fn fill(&self, i: usize, epoch: Option<u64>, buf: &mut Vec<f64>) {
        let key = situation_key(self.seed, self.ids[i], self.mode, epoch);
        situation_draws(&self.dist, key, self.q, self.d, buf);
    }

    #[inline]
    pub(crate) fn get<'s>(&'s self, i: usize, epoch: Option<u64>, buf: &'s mut Vec<f64>) -> &'s [f64] {
        let fixed = epoch.is_none() || self.mode == DrawMode::FixedCommonRandomNumbers;
        if let (true, Some(c)) = (fixed, &self.cache) {
            let per = self.q * self.d;
            return &c[i * per..(i + 1) * per];
        }
        self.fill(i, epoch, buf);
        buf
    }
}

/// Simulated-likelihood objective of the RUM network.
pub(crate) struct RumObjective<'a> {
    pub data: &'a Dataset,
    pub utility: BoundUtility,
    pub correlation: Option<CholeskySpec>,
    pub lambda: f64,
    pub floor: f64,
    pub draws: DrawBank,
}

pub(crate) struct RumScratch {
    util: UtilityScratch,
    sim: SimScratch,
    v: Vec<f64>,
    dv: Vec<f64>,
    dl: Vec<f64>,
    raw: Vec<f64>,
}

impl<'a> RumObjective<'a> {
    pub(crate) fn new(
        data: &'a Dataset,
        utility: BoundUtility,
        dist: ErrorDistribution,
        correlation: Option<CholeskySpec>,
        sim: &SimulatorConfig,
        floor: f64,
    ) -> Self {
        let j = data.alternatives();
        let d = correlation.as_ref().map_or(j, CholeskySpec::dim);
        RumObjective {
            data,
            utility,
            correlation,
            lambda: sim.lambda,
            floor,
            draws: DrawBank::new(dist, sim, d, data),
        }
    }

    fn n_util(&self) -> usize {
        self.utility.num_params()
    }

    fn dim(&self) -> usize {
        self.correlation.as_ref().map_or(0, CholeskySpec::dim)
    }
}

impl Objective for RumObjective<'_> {
    type Prepared = Option<CorrelatedErrors>;
    type Scratch = RumScratch;

    fn data(&self) -> &Dataset {
        self.data
    }

    fn num_params(&self) -> usize {
        self.n_util() + self.correlation.as_ref().map_or(0, CholeskySpec::num_free)
    }

    fn grad_len(&self) -> usize {
        self.n_util() + self.dim() * self.dim()
    }

    fn prepare(&self, params: &[f64]) -> Result<Self::Prepared> {
        match &self.correlation {
            None => Ok(None),
            Some(spec) => Ok(Some(CorrelatedErrors {
                factor: spec.factor(&params[self.n_util()..])?,
                base: spec.base_alternative,
            })),
        }
    }

    fn scratch(&self) -> RumScratch {
        let j = self.data.alternatives();
        let d = self.dim();
        RumScratch {
            util: UtilityScratch::default(),
            sim: SimScratch::default(),
            v: vec![0.0; j],
            dv: vec![0.0; j],
            dl: vec![0.0; d * d],
            raw: Vec::new(),
        }
    }

    fn obs_loss(
        &self,
        prep: &Self::Prepared,
        params: &[f64],
        i: usize,
        epoch: Option<u64>,
        grad: Option<&mut [f64]>,
        s: &mut RumScratch,
    ) -> f64 {
        let RumScratch {
            util,
            sim,
            v,
            dv,
            dl,
            raw,
        } = s;
        let obs = self.data.obs(i);
        let nu = self.n_util();
        self.utility.utilities_into(&params[..nu], &obs, v, util);
        let draws = self.draws.get(i, epoch, raw);
        let engine = Engine {
            structure: prep.as_ref().map_or(ErrorStructure::Independent, ErrorStructure::Correlated),
            lambda: self.lambda,
        };
        let want = grad.is_some();
        let dl_out = if want && prep.is_some() { Some(&mut dl[..]) } else { None };
        let (loss, _) = engine.loss_grad(v, draws, obs.available(), obs.choice(), self.floor, dv, dl_out, sim);
        if let Some(g) = grad {
            if dv.iter().any(|&x| x != 0.0) {
                self.utility.backward(&params[..nu], &obs, dv, &mut g[..nu], util);
                if prep.is_some() {
                    for (t, &x) in g[nu..].iter_mut().zip(dl.iter()) {
                        *t += x;
                    }
                }
            }
        }
        loss
    }

    fn finish_grad(&self, prep: &Self::Prepared, params: &[f64], acc: &[f64], grad: &mut [f64]) {
        let nu = self.n_util();
        grad[..nu].copy_from_slice(&acc[..nu]);
        if let (Some(spec), Some(c)) = (&self.correlation, prep) {
            let d = self.dim();
            let dl = Matrix::from_vec(d, d, acc[nu..].to_vec()).expect("accumulator size");
            let g = &mut grad[nu..];
            g.iter_mut().for_each(|x| *x = 0.0);
            spec.backprop(&params[nu..], &c.factor, &dl, g);
        }
    }

    fn probabilities(&self, prep: &Self::Prepared, params: &[f64], i: usize, out: &mut [f64], s: &mut RumScratch) {
        let obs = self.data.obs(i);
        let nu = self.n_util();
        self.utility.utilities_into(&params[..nu], &obs, &mut s.v, &mut s.util);
        let draws = self.draws.get(i, None, &mut s.raw);
        let engine = Engine {
            structure: prep.as_ref().map_or(ErrorStructure::Independent, ErrorStructure::Correlated),
            lambda: self.lambda,
        };
        engine.probabilities_into(&s.v, draws, obs.available(), out, &mut s.sim);
    }
}

/// Softmax with availability masking; returns the log-normalizer.
fn masked_softmax(v: &[f64], available: Option<&[bool]>, out: &mut [f64]) -> f64 {
    let avail = |j: usize| available.is_none_or(|a| a[j]);
    let m = v
        .iter()
        .enumerate()
        .filter(|&(j, _)| avail(j))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, (o, &x)) in out.iter_mut().zip(v).enumerate() {
        *o = if avail(j) { libm::exp(x - m) } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    m + libm::log(total)
}

pub(crate) struct MnlObjective<'a> {
    pub data: &'a Dataset,
    pub model: LinearModel,
}

pub(crate) struct SoftScratch {
    v: Vec<f64>,
    p: Vec<f64>,
}

impl Objective for MnlObjective<'_> {
    type Prepared = ();
    type Scratch = SoftScratch;

    fn data(&self) -> &Dataset {
        self.data
    }

    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    fn prepare(&self, _params: &[f64]) -> Result<()> {
        Ok(())
    }

    fn scratch(&self) -> SoftScratch {
        let j = self.data.alternatives();
        SoftScratch {
            v: vec![0.0; j],
            p: vec![0.0; j],
        }
    }

    fn obs_loss(&self, _: &(), params: &[f64], i: usize, _: Option<u64>, grad: Option<&mut [f64]>, s: &mut SoftScratch) -> f64 {
        let obs = self.data.obs(i);
        let y = obs.choice();
        self.model.utilities_into(params, &obs, &mut s.v);
        let lse = masked_softmax(&s.v, obs.available(), &mut s.p);
        if let Some(g) = grad {
            s.p[y] -= 1.0;
            self.model.backward(&obs, &s.p, g);
        }
        lse - s.v[y]
    }

    fn probabilities(&self, _: &(), params: &[f64], i: usize, out: &mut [f64], s: &mut SoftScratch) {
        let obs = self.data.obs(i);
        self.model.utilities_into(params, &obs, &mut s.v);
        masked_softmax(&s.v, obs.available(), out);
    }
}

/// Binary probit with IID standard normal errors.
pub(crate) struct ProbitObjective<'a> {
    pub data: &'a Dataset,
    pub model: LinearModel,
}

fn both_available(available: Option<&[bool]>) -> bool {
    available.is_none_or(|a| a[0] && a[1])
}

impl Objective for ProbitObjective<'_> {
    type Prepared = ();
    type Scratch = SoftScratch;

    fn data(&self) -> &Dataset {
        self.data
    }

    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    fn prepare(&self, _params: &[f64]) -> Result<()> {
        Ok(())
    }

    fn scratch(&self) -> SoftScratch {
        SoftScratch {
            v: vec![0.0; 2],
            p: vec![0.0; 2],
        }
    }

    fn obs_loss(&self, _: &(), params: &[f64], i: usize, _: Option<u64>, grad: Option<&mut [f64]>, s: &mut SoftScratch) -> f64 {
        let obs = self.data.obs(i);
        if !both_available(obs.available()) {
            return 0.0;
        }
        self.model.utilities_into(params, &obs, &mut s.v);
        let sign = if obs.choice() == 0 { 1.0 } else { -1.0 };
        let x = sign * (s.v[0] - s.v[1]) * core::f64::consts::FRAC_1_SQRT_2;
        if let Some(g) = grad {
            let dx = -normal_hazard_lower(x) * sign * core::f64::consts::FRAC_1_SQRT_2;
            s.p[0] = dx;
            s.p[1] = -dx;
            self.model.backward(&obs, &s.p, g);
        }
        -ln_normal_cdf(x)
    }

    fn probabilities(&self, _: &(), params: &[f64], i: usize, out: &mut [f64], s: &mut SoftScratch) {
        let obs = self.data.obs(i);
        let av = obs.available();
        if !both_available(av) {
            let a = av.expect("availability present");
            out[0] = f64::from(u8::from(a[0]));
            out[1] = 1.0 - out[0];
            return;
        }
        self.model.utilities_into(params, &obs, &mut s.v);
        out[0] = normal_cdf((s.v[0] - s.v[1]) * core::f64::consts::FRAC_1_SQRT_2);
        out[1] = 1.0 - out[0];
    }
}

/// Feedforward softmax classifier over all attributes.
pub(crate) struct DnnObjective<'a> {
    pub data: &'a Dataset,
    pub net: Mlp,
}

pub(crate) struct DnnScratch {
    input: Vec<f64>,
    net: MlpScratch,
    p: Vec<f64>,
}

impl DnnObjective<'_> {
    fn fill(&self, i: usize, input: &mut Vec<f64>) {
        let obs = self.data.obs(i);
        input.clear();
        for j in 0..self.data.alternatives() {
            input.extend_from_slice(obs.alt(j));
        }
        input.extend_from_slice(obs.shared());
    }
}

/// Number of inputs of the classifier for a dataset.
pub(crate) fn dnn_inputs(data: &Dataset) -> usize {
    data.alternative_blocks().iter().map(|a| a.attributes.len()).sum::<usize>()
        + data.shared_names().len()
}

impl Objective for DnnObjective<'_> {
    type Prepared = ();
    type Scratch = DnnScratch;

    fn data(&self) -> &Dataset {
        self.data
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn prepare(&self, _params: &[f64]) -> Result<()> {
        Ok(())
    }

    fn scratch(&self) -> DnnScratch {
        DnnScratch {
            input: Vec::new(),
            net: self.net.scratch(),
            p: vec![0.0; self.data.alternatives()],
        }
    }

    fn obs_loss(&self, _: &(), params: &[f64], i: usize, _: Option<u64>, grad: Option<&mut [f64]>, s: &mut DnnScratch) -> f64 {
        self.fill(i, &mut s.input);
        let obs = self.data.obs(i);
        let y = obs.choice();
        let logits = self.net.forward(params, &s.input, &mut s.net);
        let ly = logits[y];
        let lse = masked_softmax(logits, obs.available(), &mut s.p);
        if let Some(g) = grad {
            s.p[y] -= 1.0;
            self.net.backward(params, &mut s.net, &s.p, g);
        }
        lse - ly
    }

    fn probabilities(&self, _: &(), params: &[f64], i: usize, out: &mut [f64], s: &mut DnnScratch) {
        self.fill(i, &mut s.input);
        let obs = self.data.obs(i);
        let logits = self.net.forward(params, &s.input, &mut s.net);
        masked_softmax(logits, obs.available(), out);
    }
}
