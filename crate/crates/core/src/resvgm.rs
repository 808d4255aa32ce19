//! Residual value guidance.
//!
//! The token embedding `Z` of the noisy input, taken once before the first
//! block, is fed to every attention sub-layer:
//!
//! ```text
//! H = attn(Q, K, V + lambda1 * Z) + lambda2 * (Z - V)
//! ```
//!
//! with per-channel `lambda1`, `lambda2` owned by each block.

use crate::backbone::config::ModelConfig;
use crate::backbone::params::param_specs;
use crate::error::{shape_err, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Init, ParamSpec};
use crate::numerics::real::Real;

/// Guidance inputs for one block: the shared embedding and its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Guidance {
    pub z: Var,
    pub lambda1: Var,
    pub lambda2: Var,
}

pub const LAMBDA1: &str = "lambda1";
pub const LAMBDA2: &str = "lambda2";

/// Zero-initialized guidance weights, so a fresh block is unguided.
pub fn resvgm_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.{LAMBDA1}"), &[d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.{LAMBDA2}"), &[d], Init::Zeros),
    ]
}

/// Wraps an attention function with residual value guidance. `attn` receives
/// the (possibly guided) value and returns the attention output. Without
/// guidance this is exactly `attn(v)`.
pub fn apply_resvgm<T, F>(g: &mut Graph<T>, v: Var, guide: Option<&Guidance>, attn: F) -> Result<Var>
where
    T: Real,
    F: FnOnce(&mut Graph<T>, Var) -> Result<Var>,
{
    let Some(gd) = guide else {
        return attn(g, v);
    };
    let d = g.value(v).last_dim();
    if g.shape(gd.z) != g.shape(v) {
        return shape_err(format!("resvgm: Z {:?} vs V {:?}", g.shape(gd.z), g.shape(v)));
    }
    for (name, l) in [(LAMBDA1, gd.lambda1), (LAMBDA2, gd.lambda2)] {
        if g.value(l).len() != d {
            return shape_err(format!("resvgm: {name} has {} entries, width is {d}", g.value(l).len()));
        }
    }
    let zl = g.mul_channel(gd.z, gd.lambda1);
    let guided = g.add(v, zl);
    let h = attn(g, guided)?;
    let diff = g.sub(gd.z, v);
    let corr = g.mul_channel(diff, gd.lambda2);
    Ok(g.add(h, corr))
}

/// Fraction of model parameters spent on guidance weights.
pub fn resvgm_param_overhead(config: &ModelConfig) -> f64 {
    let specs = param_specs(config);
    let total: usize = specs.iter().map(ParamSpec::numel).sum();
    let guidance: usize = specs
        .iter()
        .filter(|s| s.name.ends_with(LAMBDA1) || s.name.ends_with(LAMBDA2))
        .map(ParamSpec::numel)
        .sum();
    guidance as f64 / total as f64
}
