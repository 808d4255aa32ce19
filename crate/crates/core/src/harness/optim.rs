//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to the `i`-th parameter in
    /// store order; `None` means zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<&Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return shape_err("optimizer state does not match parameters");
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let step_size = T::of(c.lr / bc1);
        let rbc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = grads[i] else { continue };
            if g.shape() != p.shape() {
                return shape_err(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *x = *x * decay - step_size * *mi / ((*vi).sqrt() * rbc2 + eps);
            }
        }
        Ok(())
    }
}
