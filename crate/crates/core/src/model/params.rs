use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use tensorcore::Array;

use crate::error::{CoreError, Result};

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    map: BTreeMap<String, Array>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(CoreError::Config(format!("duplicate parameter {name}")));
        }
        self.map.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.map
            .get(name)
            .ok_or_else(|| CoreError::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.map
            .get_mut(name)
            .ok_or_else(|| CoreError::Config(format!("missing parameter {name}")))
    }

    /// Replaces a value, keeping the recorded shape.
    pub fn set(&mut self, name: &str, value: Array) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(CoreError::Config(format!(
                "parameter {name}: shape {:?} cannot replace {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.map
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, a)| a.len())
            .sum()
    }

    /// Copies every parameter under `prefix` from `other`.
    pub fn copy_prefix(&mut self, other: &ModelParams, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (k, v) in other.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.set(k, v.clone())?;
            n += 1;
        }
        Ok(n)
    }

    /// Keeps only parameters under `prefix`.
    pub fn subset(&self, prefix: &str) -> ModelParams {
        ModelParams {
            map: self
                .map
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: ModelParams) -> Result<()> {
        for (k, v) in other.map {
            self.insert(k, v)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|a| a.all_finite())
    }
}

/// He-normal array with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Array {
    let sd = (2.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}
