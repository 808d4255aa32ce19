//! WKV attention for the spatial and temporal blocks.

pub mod layout;
pub mod quadratic;
pub mod scan;
pub mod shift;

pub use layout::{FrameGrid, SeqLayout};
pub use quadratic::{naive_attention, softmax_attention};
pub use scan::{softplus_inverse, wkv_reference, wkv_scan};
pub use shift::{token_shift_spatial, token_shift_temporal};

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Bound, Init, ParamSpec};
use crate::numerics::real::Real;
use crate::resvgm::{apply_resvgm, Guidance};

/// Lower and upper end of the initial `softplus(w)` decay span.
pub const DECAY_INIT_RANGE: (f64, f64) = (0.3, 3.0);

/// Which axis a WKV sub-layer mixes along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    /// Flattened row-major tokens of each frame; 3x3 depthwise shift.
    Spatial(FrameGrid),
    /// Frames at each spatial site; length-3 depthwise shift.
    Temporal(SeqLayout),
}

impl Mixing {
    pub fn layout(&self) -> SeqLayout {
        match *self {
            Mixing::Spatial(g) => SeqLayout::spatial(g.frames, g.h * g.w),
            Mixing::Temporal(l) => l,
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, Mixing::Spatial(_))
    }
}

/// Initial raw decays: `softplus(w_c)` linear from 0.3 to 3 across channels.
pub fn decay_init(d: usize) -> Vec<f64> {
    let (lo, hi) = DECAY_INIT_RANGE;
    (0..d)
        .map(|c| {
            let frac = if d > 1 { c as f64 / (d - 1) as f64 } else { 0.0 };
            softplus_inverse(lo + (hi - lo) * frac)
        })
        .collect()
}

pub fn wkv_specs(prefix: &str, d: usize, spatial: bool) -> Vec<ParamSpec> {
    let shift = if spatial {
        ParamSpec::new(
            format!("{prefix}.shift"),
            &[3, 3, d],
            Init::Values((0..9 * d).map(|i| if i / d == 4 { 1.0 } else { 0.0 }).collect()),
        )
    } else {
        ParamSpec::new(
            format!("{prefix}.shift"),
            &[3, d],
            Init::Values((0..3 * d).map(|i| if i / d == 1 { 1.0 } else { 0.0 }).collect()),
        )
    };
    vec![
        shift,
        ParamSpec::new(format!("{prefix}.w_r"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.w_k"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.w_v"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.w_o"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.decay"), &[d], Init::Values(decay_init(d))),
        ParamSpec::new(format!("{prefix}.bonus"), &[d], Init::Zeros),
    ]
}

/// WKV sub-layer parameters bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct WkvParams {
    pub shift: Var,
    pub w_r: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    /// Raw decay `w`; the scan uses `softplus(w)`.
    pub decay: Var,
    pub bonus: Var,
}

impl WkvParams {
    pub fn bind(p: &Bound<'_>, prefix: &str) -> Self {
        let get = |n: &str| p.get(&format!("{prefix}.{n}"));
        Self {
            shift: get("shift"),
            w_r: get("w_r"),
            w_k: get("w_k"),
            w_v: get("w_v"),
            w_o: get("w_o"),
            decay: get("decay"),
            bonus: get("bonus"),
        }
    }
}

/// `shift -> (r, k, v) -> sigmoid(r) * wkv(k, v [+ guidance]) -> W_o`, with
/// the guidance residual added after the output projection.
pub fn wkv_sublayer<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &WkvParams,
    mixing: Mixing,
    guide: Option<&Guidance>,
) -> Result<Var> {
    let xs = match mixing {
        Mixing::Spatial(grid) => g.shift_spatial(x, p.shift, grid)?,
        Mixing::Temporal(layout) => g.shift_temporal(x, p.shift, layout)?,
    };
    let r = g.linear(xs, p.w_r, None);
    let k = g.linear(xs, p.w_k, None);
    let v = g.linear(xs, p.w_v, None);
    let layout = mixing.layout();
    apply_resvgm(g, v, guide, |g, v_in| {
        let y = g.wkv(k, v_in, p.decay, p.bonus, layout)?;
        let gate = g.sigmoid(r);
        let gated = g.mul(gate, y);
        Ok(g.linear(gated, p.w_o, None))
    })
}
