use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered parameter vector with a bijective name index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NamedValue>", into = "Vec<NamedValue>")]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<f64>,
    index: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

impl ParameterSet {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::shape("parameter values", names.len(), values.len()));
        }
        let mut index = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate parameter name `{n}`")));
            }
        }
        Ok(ParameterSet {
            names,
            values,
            index,
        })
    }

    pub fn zeros(names: Vec<String>) -> Result<Self> {
        let n = names.len();
        Self::new(names, alloc::vec![0.0; n])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown parameter `{name}`")))?;
        self.values[i] = value;
        Ok(())
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::shape("parameter values", self.values.len(), values.len()));
        }
        Ok(ParameterSet {
            names: self.names.clone(),
            values,
            index: self.index.clone(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

impl TryFrom<Vec<NamedValue>> for ParameterSet {
    type Error = Error;
    fn try_from(v: Vec<NamedValue>) -> Result<Self> {
        let (names, values) = v.into_iter().map(|nv| (nv.name, nv.value)).unzip();
        ParameterSet::new(names, values)
    }
}

impl From<ParameterSet> for Vec<NamedValue> {
    fn from(p: ParameterSet) -> Self {
        p.names
            .into_iter()
            .zip(p.values)
            .map(|(name, value)| NamedValue { name, value })
            .collect()
    }
}
