//! Named parameter tensors shared by the classifier and the explainer.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered map from parameter name to value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    /// Looks up a parameter that a model requires.
    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.0.values().map(Tensor::numel).sum()
    }

    /// Registers every parameter on `tape`, returning their node ids.
    pub fn bind(&self, tape: &mut Tape) -> Result<BTreeMap<String, NodeId>> {
        self.0
            .iter()
            .map(|(name, t)| Ok((name.clone(), tape.param(name.clone(), t.clone())?)))
            .collect()
    }

    /// Bitwise equality of every tensor.
    pub fn bitwise_eq(&self, other: &Params) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|((na, a), (nb, b))| na == nb && a.bitwise_eq(b))
    }

    /// SHA-256 over names, shapes and the raw bits of every value.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.0 {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            for &d in t.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks that `other` holds the same names with the same shapes.
    pub fn check_layout(&self, other: &Params) -> Result<()> {
        for (name, t) in &self.0 {
            let o = other.expect(name)?;
            if o.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "parameter layout",
                    lhs: t.shape().to_vec(),
                    rhs: o.shape().to_vec(),
                });
            }
        }
        if other.len() != self.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform matrix: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("positive extents")
}
