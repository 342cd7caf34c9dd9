//! In-memory choice datasets, fold splitting and input standardization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Attributes of one alternative across all choice situations (`N × K` row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternativeBlock {
    pub name: String,
    pub attributes: Vec<String>,
    pub values: Vec<f64>,
}

/// Person-level attributes shared by all alternatives (`N × R` row-major).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SharedBlock {
    pub names: Vec<String>,
    /// One-hot indicator columns are left unscaled by [`Standardizer`].
    pub indicator: Vec<bool>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    alternatives: Vec<AlternativeBlock>,
    shared: SharedBlock,
    choice: Vec<usize>,
    availability: Option<Vec<bool>>,
    /// Stable identifiers used to address per-situation random draws.
    ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        alternatives: Vec<AlternativeBlock>,
        shared: SharedBlock,
        choice: Vec<usize>,
        availability: Option<Vec<bool>>,
    ) -> Result<Self> {
        let ids = (0..choice.len() as u64).collect();
        Self::with_ids(alternatives, shared, choice, availability, ids)
    }

    pub fn with_ids(
        alternatives: Vec<AlternativeBlock>,
        shared: SharedBlock,
        choice: Vec<usize>,
        availability: Option<Vec<bool>>,
        ids: Vec<u64>,
    ) -> Result<Self> {
        let n = choice.len();
        let j = alternatives.len();
        if j < 2 {
            return Err(Error::config("a choice set needs at least two alternatives"));
        }
        if ids.len() != n {
            return Err(Error::shape("situation ids", n, ids.len()));
        }
        for alt in &alternatives {
            if alt.values.len() != n * alt.attributes.len() {
                return Err(Error::shape(
                    format!("attributes of alternative `{}`", alt.name),
                    n * alt.attributes.len(),
                    alt.values.len(),
                ));
            }
            if let Some(pos) = alt.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "non-finite value in row {} attribute `{}` of alternative `{}`",
                    pos / alt.attributes.len().max(1),
                    alt.attributes[pos % alt.attributes.len()],
                    alt.name
                )));
            }
        }
        let r = shared.names.len();
        if shared.indicator.len() != r {
            return Err(Error::shape("shared indicator flags", r, shared.indicator.len()));
        }
        if shared.values.len() != n * r {
            return Err(Error::shape("shared attributes", n * r, shared.values.len()));
        }
        if let Some(pos) = shared.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!(
                "non-finite value in row {} shared attribute `{}`",
                pos / r,
                shared.names[pos % r]
            )));
        }
        if let Some(av) = &availability {
            if av.len() != n * j {
                return Err(Error::shape("availability mask", n * j, av.len()));
            }
        }
        for (i, &y) in choice.iter().enumerate() {
            if y >= j {
                return Err(Error::Schema(format!(
                    "row {i}: choice index {y} outside 0..{j}"
                )));
            }
            if let Some(av) = &availability {
                if !av[i * j + y] {
                    return Err(Error::Schema(format!(
                        "row {i}: chosen alternative {y} is unavailable"
                    )));
                }
            }
        }
        Ok(Dataset {
            alternatives,
            shared,
            choice,
            availability,
            ids,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }

    #[inline]
    pub fn alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn alternative_blocks(&self) -> &[AlternativeBlock] {
        &self.alternatives
    }

    pub fn shared_block(&self) -> &SharedBlock {
        &self.shared
    }

    pub fn alternative_names(&self) -> Vec<String> {
        self.alternatives.iter().map(|a| a.name.clone()).collect()
    }

    pub fn choices(&self) -> &[usize] {
        &self.choice
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn availability_mask(&self) -> Option<&[bool]> {
        self.availability.as_deref()
    }

    pub fn attribute_index(&self, alternative: usize, name: &str) -> Option<usize> {
        self.alternatives
            .get(alternative)?
            .attributes
            .iter()
            .position(|a| a == name)
    }

    pub fn shared_index(&self, name: &str) -> Option<usize> {
        self.shared.names.iter().position(|a| a == name)
    }

    pub fn shared_names(&self) -> &[String] {
        &self.shared.names
    }

    #[inline]
    pub fn obs(&self, i: usize) -> Obs<'_> {
        Obs { data: self, i }
    }

    /// Rows `indices` (in that order), keeping their ids.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let alternatives = self
            .alternatives
            .iter()
            .map(|a| {
                let k = a.attributes.len();
                let mut values = Vec::with_capacity(indices.len() * k);
                for &i in indices {
                    values.extend_from_slice(&a.values[i * k..(i + 1) * k]);
                }
                AlternativeBlock {
                    name: a.name.clone(),
                    attributes: a.attributes.clone(),
                    values,
                }
            })
            .collect();
        let r = self.shared.names.len();
        let mut shared_values = Vec::with_capacity(indices.len() * r);
        for &i in indices {
            shared_values.extend_from_slice(&self.shared.values[i * r..(i + 1) * r]);
        }
        let j = self.alternatives();
        let availability = self.availability.as_ref().map(|av| {
            let mut out = Vec::with_capacity(indices.len() * j);
            for &i in indices {
                out.extend_from_slice(&av[i * j..(i + 1) * j]);
            }
            out
        });
        Dataset {
            alternatives,
            shared: SharedBlock {
                names: self.shared.names.clone(),
                indicator: self.shared.indicator.clone(),
                values: shared_values,
            },
            choice: indices.iter().map(|&i| self.choice[i]).collect(),
            availability,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Empirical share of each alternative among the observed choices.
    pub fn choice_shares(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.alternatives()];
        for &y in &self.choice {
            counts[y] += 1.0;
        }
        let n = self.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

/// Borrowed view of one choice situation.
#[derive(Clone, Copy, Debug)]
pub struct Obs<'a> {
    data: &'a Dataset,
    i: usize,
}

impl<'a> Obs<'a> {
    #[inline]
    pub fn index(&self) -> usize {
        self.i
    }

    #[inline]
    pub fn id(&self) -> u64 {
        self.data.ids[self.i]
    }

    #[inline]
    pub fn alt(&self, j: usize) -> &'a [f64] {
        let a = &self.data.alternatives[j];
        let k = a.attributes.len();
        &a.values[self.i * k..(self.i + 1) * k]
    }

    #[inline]
    pub fn shared(&self) -> &'a [f64] {
        let r = self.data.shared.names.len();
        &self.data.shared.values[self.i * r..(self.i + 1) * r]
    }

    #[inline]
    pub fn choice(&self) -> usize {
        self.data.choice[self.i]
    }

    #[inline]
    pub fn available(&self) -> Option<&'a [bool]> {
        let j = self.data.alternatives();
        self.data
            .availability
            .as_ref()
            .map(|av| &av[self.i * j..(self.i + 1) * j])
    }
}

/// Seeded shuffle then contiguous partition into `k` folds.
///
/// Returns `(train, test)` index lists, both sorted ascending. Fold sizes
/// differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::config("k-fold needs k >= 2"));
    }
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds the {n} observations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StreamKey::new(seed).split(0x6b_666f_6c64).stream();
    for i in (1..n).rev() {
        let j = rng.next_index(i + 1);
        order.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test: Vec<usize> = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut in_test = vec![false; n];
        for &t in &test {
            in_test[t] = true;
        }
        let train = (0..n).filter(|&i| !in_test[i]).collect();
        folds.push((train, test));
        start += size;
    }
    Ok(folds)
}

/// Per-column z-scoring learned from one dataset and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// `(mean, std)` per attribute, per alternative.
    pub alternatives: Vec<Vec<(f64, f64)>>,
    /// `(mean, std)` per shared column; indicators keep `(0, 1)`.
    pub shared: Vec<(f64, f64)>,
}

fn column_stats(values: &[f64], stride: usize, col: usize) -> (f64, f64) {
    let n = values.len() / stride.max(1);
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = (0..n).map(|i| values[i * stride + col]).sum::<f64>() / n as f64;
    let var = (0..n)
        .map(|i| {
            let d = values[i * stride + col] - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let std = libm::sqrt(var);
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let alternatives = data
            .alternatives
            .iter()
            .map(|a| {
                let k = a.attributes.len();
                (0..k).map(|c| column_stats(&a.values, k, c)).collect()
            })
            .collect();
        let r = data.shared.names.len();
        let shared = (0..r)
            .map(|c| {
                if data.shared.indicator[c] {
                    (0.0, 1.0)
                } else {
                    column_stats(&data.shared.values, r, c)
                }
            })
            .collect();
        Standardizer {
            alternatives,
            shared,
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if self.alternatives.len() != data.alternatives() {
            return Err(Error::shape(
                "standardizer alternatives",
                self.alternatives.len(),
                data.alternatives(),
            ));
        }
        if self.shared.len() != data.shared.names.len() {
            return Err(Error::shape(
                "standardizer shared columns",
                self.shared.len(),
                data.shared.names.len(),
            ));
        }
        let mut out = data.clone();
        for (a, stats) in out.alternatives.iter_mut().zip(&self.alternatives) {
            let k = a.attributes.len();
            if stats.len() != k {
                return Err(Error::shape("standardizer attributes", stats.len(), k));
            }
            for (idx, v) in a.values.iter_mut().enumerate() {
                let (m, s) = stats[idx % k];
                *v = (*v - m) / s;
            }
        }
        let r = self.shared.len();
        for (idx, v) in out.shared.values.iter_mut().enumerate() {
            let (m, s) = self.shared[idx % r];
            *v = (*v - m) / s;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        Dataset::new(
            vec![
                AlternativeBlock {
                    name: "1".into(),
                    attributes: vec!["cost".into()],
                    values: vec![1.0, 2.0, 3.0],
                },
                AlternativeBlock {
                    name: "2".into(),
                    attributes: vec!["cost".into()],
                    values: vec![2.0, 2.0, 1.0],
                },
            ],
            SharedBlock {
                names: vec!["age".to_string()],
                indicator: vec![false],
                values: vec![30.0, 40.0, 50.0],
            },
            vec![0, 1, 1],
            None,
        )
        .unwrap()
    }

    #[test]
    fn construct_and_view() {
        let d = toy();
        assert_eq!(d.len(), 3);
        assert_eq!(d.alternatives(), 2);
        assert_eq!(d.obs(2).alt(0), &[3.0]);
        assert_eq!(d.obs(1).shared(), &[40.0]);
        assert_eq!(d.choices(), &[0, 1, 1]);
        assert_eq!(d.attribute_index(1, "cost"), Some(0));
        assert_eq!(d.shared_index("income"), None);
    }

    #[test]
    fn rejects_bad_choice_and_unavailable() {
        let mut alts = toy().alternatives.clone();
        let bad = Dataset::new(alts.clone(), SharedBlock::default(), vec![0, 2, 1], None);
        assert!(matches!(bad, Err(Error::Schema(_))));
        let av = vec![true, false, true, true, true, true];
        let bad = Dataset::new(alts.clone(), SharedBlock::default(), vec![1, 1, 1], Some(av));
        assert!(bad.is_err());
        alts[0].values[1] = f64::NAN;
        assert!(Dataset::new(alts, SharedBlock::default(), vec![0, 1, 1], None).is_err());
    }

    #[test]
    fn subset_keeps_ids() {
        let d = toy().subset(&[2, 0]);
        assert_eq!(d.ids(), &[2, 0]);
        assert_eq!(d.obs(0).alt(1), &[1.0]);
        assert_eq!(d.choices(), &[1, 0]);
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![0; 10];
        for (train, test) in &folds {
            assert_eq!(test.len(), 2);
            assert_eq!(train.len(), 8);
            for &t in test {
                seen[t] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(folds, kfold_split(10, 5, 3).unwrap());
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(kfold_split(10, 1, 0).is_err());
    }

    #[test]
    fn standardizer_uses_fit_stats() {
        let d = toy();
        let s = Standardizer::fit(&d);
        let z = s.apply(&d).unwrap();
        let col: Vec<f64> = (0..3).map(|i| z.obs(i).shared()[0]).collect();
        assert!((col.iter().sum::<f64>()).abs() < 1e-12);
        let var = col.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kfold_partitions(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let folds = kfold_split(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flat_map(|(_, t)| t.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
            let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(mx - mn <= 1);
            for (train, test) in &folds {
                prop_assert_eq!(train.len() + test.len(), n);
                prop_assert!(train.iter().all(|i| test.binary_search(i).is_err()));
            }
        }
    }
}
