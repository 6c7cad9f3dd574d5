use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

/// Named trainable tensors. Iteration is always in sorted-name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(shape_err(
                "ParamSet::insert",
                format!("duplicate name `{name}`"),
            ));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Element-wise `self += other` for every tensor of `other`.
    pub fn accumulate(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in &other.tensors {
            let dst = self.get_mut(name)?;
            if dst.shape() != t.shape() {
                return Err(shape_err(
                    "ParamSet::accumulate",
                    format!("`{name}`: {:?} vs {:?}", dst.shape(), t.shape()),
                ));
            }
            for (d, s) in dst.data_mut().iter_mut().zip(t.data()) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Adds a `[cout, cin, k, k]` weight drawn from N(0, 2/fan_in) and a zero bias.
    pub fn init_conv<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        cout: usize,
        cin: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<()> {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let data = (0..cout * cin * k * k)
            .map(|_| normal.sample(rng))
            .collect();
        self.insert(
            format!("{prefix}.weight"),
            Tensor::from_vec(&[cout, cin, k, k], data)?,
        )?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]))
    }
}
