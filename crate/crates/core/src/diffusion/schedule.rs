//! Linear variance schedule.

use crate::error::{config_err, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

/// Per-step coefficients, stored for `t = 1..=T` at index `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    /// `beta` linear from `beta_start` at `t = 1` to `beta_end` at `t = steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return config_err("schedule needs at least one step");
        }
        let ok = 0.0 < beta_start && beta_end < 1.0 && (beta_start < beta_end || steps == 1 && beta_start < 1.0);
        if !ok {
            return config_err(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            ));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut prod = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                prod *= 1.0 - b;
                prod
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// The standard 1000-step schedule.
    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap()
    }

    /// Schedule with `steps` steps whose endpoints are the defaults scaled by
    /// `1000 / steps`, keeping the total noise roughly fixed as `T` shrinks.
    pub fn scaled(steps: usize) -> Result<Self> {
        let k = DEFAULT_STEPS as f64 / steps.max(1) as f64;
        Self::linear(steps, DEFAULT_BETA_START * k, (DEFAULT_BETA_END * k).min(0.999))
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.idx(t)]
        }
    }

    /// Signal coefficient `sqrt(alpha_bar)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// Noise coefficient `sqrt(1 - alpha_bar)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Posterior variance of `x_{t-1}` given `x_t` and `x_0`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }
}
