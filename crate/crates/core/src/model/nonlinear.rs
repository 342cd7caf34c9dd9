use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::network::{Mlp, MlpScratch};
use crate::data::{Dataset, Obs};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

fn default_hidden() -> Vec<usize> {
    vec![100, 100]
}

fn default_true() -> bool {
    true
}

/// One rectifier subnetwork per alternative, fed that alternative's attributes
/// plus the full block of shared attributes, ending in a single output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearUtilitySpec {
    pub alternatives: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Attributes fed to each subnetwork; all of the alternative's attributes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_inputs: Option<Vec<Vec<String>>>,
    /// Continuous columns are z-scored with training statistics before fitting.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl NonlinearUtilitySpec {
    pub fn new(alternatives: usize, hidden: Vec<usize>) -> Self {
        NonlinearUtilitySpec {
            alternatives,
            hidden,
            alternative_inputs: None,
            standardize: true,
        }
    }

    pub fn bind(&self, data: &Dataset) -> Result<NonlinearModel> {
        if data.alternatives() != self.alternatives {
            return Err(Error::shape(
                "dataset alternatives",
                self.alternatives,
                data.alternatives(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        let shared = data.shared_names().len();
        let mut nets = Vec::with_capacity(self.alternatives);
        let mut columns = Vec::with_capacity(self.alternatives);
        let mut offsets = Vec::with_capacity(self.alternatives + 1);
        let mut names = Vec::new();
        offsets.push(0);
        for j in 0..self.alternatives {
            let cols: Vec<usize> = match &self.alternative_inputs {
                Some(inputs) => {
                    let list = inputs.get(j).ok_or_else(|| {
                        Error::shape("alternative input lists", self.alternatives, inputs.len())
                    })?;
                    list.iter()
                        .map(|a| {
                            data.attribute_index(j, a).ok_or_else(|| {
                                Error::Schema(format!("alternative {j} has no attribute `{a}`"))
                            })
                        })
                        .collect::<Result<_>>()?
                }
                None => (0..data.alternative_blocks()[j].attributes.len()).collect(),
            };
            let net = Mlp::new(cols.len() + shared, &self.hidden, 1);
            names.extend(net.parameter_names(&format!("V{}", j + 1)));
            offsets.push(offsets[j] + net.num_params());
            nets.push(net);
            columns.push(cols);
        }
        Ok(NonlinearModel {
            nets,
            columns,
            offsets,
            names,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearModel {
    nets: Vec<Mlp>,
    columns: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    names: Vec<String>,
}

/// Per-alternative network activations and input buffer.
#[derive(Clone, Debug, Default)]
pub struct NonlinearScratch {
    nets: Vec<MlpScratch>,
    input: Vec<f64>,
}

impl NonlinearModel {
    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn alternatives(&self) -> usize {
        self.nets.len()
    }

    pub fn initial_values(&self, seed: u64) -> Vec<f64> {
        let mut w = vec![0.0; self.num_params()];
        let key = StreamKey::new(seed).split(0x6e6574);
        for (j, net) in self.nets.iter().enumerate() {
            net.init(
                &mut key.split(j as u64).stream(),
                &mut w[self.offsets[j]..self.offsets[j + 1]],
            );
        }
        w
    }

    pub fn scratch(&self) -> NonlinearScratch {
        NonlinearScratch {
            nets: self.nets.iter().map(Mlp::scratch).collect(),
            input: Vec::new(),
        }
    }

    fn fill_input(&self, j: usize, obs: &Obs<'_>, input: &mut Vec<f64>) {
        input.clear();
        let alt = obs.alt(j);
        input.extend(self.columns[j].iter().map(|&c| alt[c]));
        input.extend_from_slice(obs.shared());
    }

    pub fn utilities_into(
        &self,
        params: &[f64],
        obs: &Obs<'_>,
        out: &mut [f64],
        s: &mut NonlinearScratch,
    ) {
        if s.nets.len() != self.nets.len() {
            *s = self.scratch();
        }
        for (j, net) in self.nets.iter().enumerate() {
            self.fill_input(j, obs, &mut s.input);
            let w = &params[self.offsets[j]..self.offsets[j + 1]];
            out[j] = net.forward(w, &s.input, &mut s.nets[j])[0];
        }
    }

    /// Requires `utilities_into` on the same observation and parameters first.
    pub fn backward(&self, params: &[f64], dv: &[f64], grad: &mut [f64], s: &mut NonlinearScratch) {
        for (j, net) in self.nets.iter().enumerate() {
            if dv[j] == 0.0 {
                continue;
            }
            let (lo, hi) = (self.offsets[j], self.offsets[j + 1]);
            net.backward(&params[lo..hi], &mut s.nets[j], &dv[j..j + 1], &mut grad[lo..hi]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AlternativeBlock, SharedBlock};
    use alloc::string::ToString;

    fn data() -> Dataset {
        Dataset::new(
            vec![
                AlternativeBlock {
                    name: "a".into(),
                    attributes: vec!["t".into(), "c".into()],
                    values: vec![1.0, 2.0, -1.0, 0.5],
                },
                AlternativeBlock {
                    name: "b".into(),
                    attributes: vec!["t".into()],
                    values: vec![0.3, 0.7],
                },
            ],
            SharedBlock {
                names: vec!["age".to_string()],
                indicator: vec![false],
                values: vec![0.2, -0.4],
            },
            vec![0, 1],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_utilities() {
        let d = data();
        let m = NonlinearUtilitySpec::new(2, vec![3, 3]).bind(&d).unwrap();
        let w = vec![0.0; m.num_params()];
        let mut out = [1.0; 2];
        let mut s = m.scratch();
        m.utilities_into(&w, &d.obs(0), &mut out, &mut s);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn every_subnetwork_sees_shared_block() {
        let d = data();
        let m = NonlinearUtilitySpec::new(2, vec![4]).bind(&d).unwrap();
        // inputs: alt a has 2 attributes + 1 shared, alt b has 1 + 1
        assert_eq!(m.num_params(), (3 * 4 + 4 + 4 + 1) + (2 * 4 + 4 + 4 + 1));
        let restricted = NonlinearUtilitySpec {
            alternative_inputs: Some(vec![vec!["c".into()], vec!["t".into()]]),
            ..NonlinearUtilitySpec::new(2, vec![4])
        };
        let m = restricted.bind(&d).unwrap();
        assert_eq!(m.num_params(), 2 * (2 * 4 + 4 + 4 + 1));
        let bad = NonlinearUtilitySpec {
            alternative_inputs: Some(vec![vec!["zzz".into()], vec![]]),
            ..NonlinearUtilitySpec::new(2, vec![4])
        };
        assert!(matches!(bad.bind(&d), Err(Error::Schema(_))));
    }

    #[test]
    fn directional_derivative_matches_finite_difference() {
        let d = data();
        let m = NonlinearUtilitySpec::new(2, vec![6, 5]).bind(&d).unwrap();
        let w = m.initial_values(7);
        let dir: Vec<f64> = (0..w.len()).map(|k| libm::cos(k as f64)).collect();
        let dv = [0.6, -0.9];
        let f = |w: &[f64]| {
            let mut out = [0.0; 2];
            let mut s = m.scratch();
            m.utilities_into(w, &d.obs(1), &mut out, &mut s);
            out[0] * dv[0] + out[1] * dv[1]
        };
        let mut s = m.scratch();
        let mut out = [0.0; 2];
        m.utilities_into(&w, &d.obs(1), &mut out, &mut s);
        let mut g = vec![0.0; w.len()];
        m.backward(&w, &dv, &mut g, &mut s);
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let h = 1e-6;
        let up: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let dn: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        assert!((fd - analytic).abs() < 1e-6, "fd {fd} vs {analytic}");
    }
}
