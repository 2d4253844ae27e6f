use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ADAM hyperparameters {self:?}")))
        }
    }
}

/// First and second moments for a fixed set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Zero moments for every parameter in `params`.
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), t.zeros_like()))
            .collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }
}

/// One bias-corrected ADAM update of every parameter tracked by `state`.
///
/// `grads` must hold a same-shaped gradient for each tracked parameter;
/// extra entries are ignored.
pub fn adam_step(
    params: &mut Params,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<()> {
    for (name, m) in &state.m {
        let p = params
            .get(name)
            .ok_or_else(|| Error::arg(format!("optimizer tracks unknown parameter `{name}`")))?;
        let g = grads
            .get(name)
            .ok_or_else(|| Error::arg(format!("missing gradient for `{name}`")))?;
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::arg(format!(
                "gradient for `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }

    state.t += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (name, m) in state.m.iter_mut() {
        let v = state.v.get_mut(name).expect("moments share keys");
        let g = grads[name].data();
        let p = params.get_mut(name).expect("checked above").data_mut();
        for i in 0..p.len() {
            let mi = b1 * m.data()[i] + (1.0 - b1) * g[i];
            let vi = b2 * v.data()[i] + (1.0 - b2) * g[i] * g[i];
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}
