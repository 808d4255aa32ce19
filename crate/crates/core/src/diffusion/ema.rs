//! Exponential moving average of parameters.

use crate::error::{shape_err, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::real::Real;

pub const DEFAULT_EMA_DECAY: f64 = 0.9999;

#[derive(Clone, Debug)]
pub struct EmaState<T> {
    pub decay: f64,
    pub shadow: ParamStore<T>,
}

impl<T: Real> EmaState<T> {
    /// Starts the shadow at a copy of `params`.
    pub fn new(params: &ParamStore<T>, decay: f64) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`.
    pub fn update(&mut self, params: &ParamStore<T>) -> Result<()> {
        if !self.shadow.same_layout(params) {
            return shape_err("EMA shadow and parameters differ in layout");
        }
        let k = T::of(self.decay);
        let j = T::of(1.0 - self.decay);
        for (s, p) in self.shadow.tensors_mut().iter_mut().zip(params.tensors()) {
            for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
                *a = k * *a + j * b;
            }
        }
        Ok(())
    }
}
