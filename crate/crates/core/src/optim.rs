//! Adam with bias-corrected moment estimates.

use std::collections::BTreeMap;

use hyperweather_tensor::{Real, Tensor};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub state: BTreeMap<ParamId, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Apply one update from `grads`, visited in the given order.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step = T::of(c.lr / bc1);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        for (id, g) in grads {
            let param = store.get(*id);
            if param.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.entry(*id).name,
                    param.shape()
                )));
            }
            let n = g.numel();
            let mom = self.state.entry(*id).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            let p = store.get_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                mom.m[i] = b1 * mom.m[i] + ob1 * gi;
                mom.v[i] = b2 * mom.v[i] + ob2 * gi * gi;
                let vhat = mom.v[i] * inv_bc2;
                p[i] -= step * mom.m[i] / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
