use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moments of one parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Running elementwise maximum of `v`.
    pub vhat: Vec<f64>,
    pub t: u64,
}

impl AdamSlot {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], vhat: vec![0.0; n], t: 0 }
    }
}

/// AMSGrad state for every array in a [`Params`] store, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub slots: Vec<AdamSlot>,
}

impl AdamState {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        Self { config, slots: params.iter().map(|(_, _, t)| AdamSlot::zeros(t.numel())).collect() }
    }

    /// Grow to cover parameters added after construction.
    pub fn extend_to(&mut self, params: &Params) {
        for (id, _, t) in params.iter().skip(self.slots.len()) {
            debug_assert_eq!(id.index(), self.slots.len());
            self.slots.push(AdamSlot::zeros(t.numel()));
        }
    }

    pub fn slot(&self, id: ParamId) -> &AdamSlot {
        &self.slots[id.index()]
    }

    /// One update of the parameters in `ids`. Every gradient is checked for
    /// finiteness before anything is written. Weight decay is decoupled and
    /// applied first: `θ ← θ − lr·wd·θ`.
    pub fn step(&mut self, params: &mut Params, grads: &Gradients, ids: &[ParamId], lr: f64, weight_decay: f64) -> Result<()> {
        for &id in ids {
            if let Some(g) = grads.get(id) {
                let bad = g.data().iter().filter(|x| !x.is_finite()).count();
                if bad > 0 {
                    return Err(Error::NonFinite { name: params.name(id).to_string(), count: bad });
                }
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for &id in ids {
            let slot = &mut self.slots[id.index()];
            let theta = params.get_mut(id).data_mut();
            if slot.m.len() != theta.len() {
                return Err(Error::Shape { op: "adam", lhs: vec![slot.m.len()], rhs: vec![theta.len()] });
            }
            slot.t += 1;
            let t = slot.t as i32;
            let bc1 = 1.0 - libm::pow(beta1, f64::from(t));
            let bc2 = 1.0 - libm::pow(beta2, f64::from(t));
            let step_size = lr / bc1;
            let sqrt_bc2 = libm::sqrt(bc2);
            let g = grads.get(id).map(|g| g.data());
            for i in 0..theta.len() {
                theta[i] -= lr * weight_decay * theta[i];
                let gi = g.map_or(0.0, |g| g[i]);
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
                if slot.v[i] > slot.vhat[i] {
                    slot.vhat[i] = slot.v[i];
                }
                let denom = libm::sqrt(slot.vhat[i]) / sqrt_bc2 + eps;
                theta[i] -= step_size * slot.m[i] / denom;
            }
        }
        Ok(())
    }
}
