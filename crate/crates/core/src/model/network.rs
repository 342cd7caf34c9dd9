//! Fully connected rectifier networks with hand-written reverse accumulation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Stream;
use crate::special::normal_quantile;

/// `sizes = [input, hidden.., output]`; rectifier on hidden layers, affine output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Activations of one forward pass, reused by [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Mlp { sizes }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `prefix.L{l}.W{o}_{i}` and `prefix.L{l}.b{o}`, in storage order.
    pub fn parameter_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_params());
        for (l, w) in self.sizes.windows(2).enumerate() {
            for o in 0..w[1] {
                for i in 0..w[0] {
                    names.push(format!("{prefix}.L{l}.W{o}_{i}"));
                }
            }
            for o in 0..w[1] {
                names.push(format!("{prefix}.L{l}.b{o}"));
            }
        }
        names
    }

    /// Zero-mean normal weights with std `sqrt(2 / fan_in)` on hidden layers and
    /// `sqrt(1 / fan_in)` on the output layer; zero biases.
    pub fn init(&self, rng: &mut Stream, out: &mut [f64]) {
        let mut off = 0;
        let last = self.num_layers() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let gain = if l == last { 1.0 } else { 2.0 };
            let std = libm::sqrt(gain / w[0].max(1) as f64);
            for v in &mut out[off..off + w[0] * w[1]] {
                *v = std * normal_quantile(rng.next_uniform());
            }
            off += w[0] * w[1];
            for v in &mut out[off..off + w[1]] {
                *v = 0.0;
            }
            off += w[1];
        }
    }

    pub fn scratch(&self) -> MlpScratch {
        MlpScratch {
            acts: self.sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    pub fn forward<'s>(&self, w: &[f64], input: &[f64], s: &'s mut MlpScratch) -> &'s [f64] {
        if s.acts.len() != self.sizes.len() {
            *s = self.scratch();
        }
        s.acts[0].copy_from_slice(input);
        let last = self.num_layers() - 1;
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (head, tail) = s.acts.split_at_mut(l + 1);
            let a = &head[l];
            let z = &mut tail[0];
            let weights = &w[off..off + n_in * n_out];
            let bias = &w[off + n_in * n_out..off + n_in * n_out + n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = bias[o];
                for (wi, ai) in row.iter().zip(a.iter()) {
                    acc += wi * ai;
                }
                z[o] = if l < last && acc < 0.0 { 0.0 } else { acc };
            }
            off += n_in * n_out + n_out;
        }
        &s.acts[self.num_layers()]
    }

    /// Accumulate `∂/∂w` of `Σ dout · output` into `grad`; requires a preceding `forward`.
    pub fn backward(&self, w: &[f64], s: &mut MlpScratch, dout: &[f64], grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, win| {
                let o = *acc;
                *acc += win[0] * win[1] + win[1];
                Some(o)
            })
            .collect();
        s.delta.clear();
        s.delta.extend_from_slice(dout);
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &s.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = s.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a.iter()) {
                        *g += d * ai;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &w[off..off + n_in * n_out];
            s.delta_prev.clear();
            s.delta_prev.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = s.delta[o];
                if d == 0.0 {
                    continue;
                }
                for (dp, wi) in s.delta_prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *dp += d * wi;
                }
            }
            for (dp, &ai) in s.delta_prev.iter_mut().zip(a.iter()) {
                if ai <= 0.0 {
                    *dp = 0.0;
                }
            }
            core::mem::swap(&mut s.delta, &mut s.delta_prev);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn parameter_count_and_names() {
        let m = Mlp::new(3, &[4, 2], 1);
        assert_eq!(m.num_params(), 3 * 4 + 4 + 4 * 2 + 2 + 2 + 1);
        let names = m.parameter_names("V1");
        assert_eq!(names.len(), m.num_params());
        assert_eq!(names[0], "V1.L0.W0_0");
        assert_eq!(names.last().unwrap(), "V1.L2.b0");
    }

    #[test]
    fn single_hidden_unit_by_hand() {
        // out = max(0, w·x + b) * v + c
        let m = Mlp::new(2, &[1], 1);
        let w = [0.5, -0.25, 0.1, 2.0, -0.3];
        let mut s = m.scratch();
        let x = [1.0, 2.0];
        let out = m.forward(&w, &x, &mut s)[0];
        let hidden = f64::max(0.0, 0.5 * 1.0 - 0.25 * 2.0 + 0.1);
        assert!((out - (hidden * 2.0 - 0.3)).abs() < 1e-15);
        // All-negative pre-activation leaves only the output bias.
        let out = m.forward(&w, &[-4.0, 4.0], &mut s)[0];
        assert_eq!(out, -0.3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = Mlp::new(3, &[5, 4], 2);
        let mut w = vec![0.0; m.num_params()];
        m.init(&mut StreamKey::new(3).stream(), &mut w);
        for (k, v) in w.iter_mut().enumerate() {
            *v += 0.01 * (k as f64).sin();
        }
        let x = [0.3, -1.2, 0.8];
        let dout = [0.7, -1.1];
        let f = |w: &[f64]| {
            let mut s = m.scratch();
            let o = m.forward(w, &x, &mut s);
            o[0] * dout[0] + o[1] * dout[1]
        };
        let mut s = m.scratch();
        m.forward(&w, &x, &mut s);
        let mut g = vec![0.0; w.len()];
        m.backward(&w, &mut s, &dout, &mut g);
        for k in 0..w.len() {
            let h = 1e-6;
            let mut up = w.clone();
            let mut dn = w.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "k={k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn init_scale() {
        let m = Mlp::new(50, &[200], 1);
        let mut w = vec![0.0; m.num_params()];
        m.init(&mut StreamKey::new(1).stream(), &mut w);
        let hidden = &w[..50 * 200];
        let var = hidden.iter().map(|v| v * v).sum::<f64>() / hidden.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "var {var}");
        assert!(w[50 * 200..50 * 200 + 200].iter().all(|&b| b == 0.0));
    }
}
