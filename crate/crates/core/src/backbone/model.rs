//! Forward pass of the denoiser.

use std::rc::Rc;

use crate::backbone::config::{AttentionKind, BlockKind, ModelConfig};
use crate::backbone::params::block_prefix;
use crate::channel::{channel_sublayer, ChannelAttnParams};
use crate::error::{shape_err, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Bound, ParamStore};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::resvgm::{apply_resvgm, Guidance, LAMBDA1, LAMBDA2};
use crate::wkv::{wkv_sublayer, FrameGrid, Mixing, SeqLayout, WkvParams};

pub const LN_EPS: f64 = 1e-6;

/// Sinusoidal timestep features: `d/2` sines followed by `d/2` cosines at
/// frequencies falling geometrically from 1 to `1e-4`.
pub fn timestep_features(t: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let expo = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
        let arg = t as f64 * 1e4f64.powf(-expo);
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Index map from a `[B, F, C, H, W]` video to `[B*F*S, C*p*p]` patch rows.
pub fn patchify_index(cfg: &ModelConfig, batch: usize) -> Vec<usize> {
    let (p, c, h, w) = (cfg.patch, cfg.channels, cfg.height, cfg.width);
    let (gh, gw) = (cfg.grid_h(), cfg.grid_w());
    let mut idx = Vec::with_capacity(batch * cfg.frames * c * h * w);
    for bf in 0..batch * cfg.frames {
        for i in 0..gh {
            for j in 0..gw {
                for ch in 0..c {
                    for pi in 0..p {
                        for pj in 0..p {
                            idx.push(((bf * c + ch) * h + i * p + pi) * w + j * p + pj);
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Inverse of [`patchify_index`].
pub fn unpatchify_index(cfg: &ModelConfig, batch: usize) -> Vec<usize> {
    let fwd = patchify_index(cfg, batch);
    let mut inv = vec![0; fwd.len()];
    for (row, &src) in fwd.iter().enumerate() {
        inv[src] = row;
    }
    inv
}

/// Graph handles produced by a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Predicted noise, same shape as the input.
    pub out: Var,
    /// Patch embedding before positional terms, shared by every block.
    pub z: Var,
    /// Tokens entering the first block.
    pub tokens: Var,
}

struct Ctx {
    batch: usize,
    grid: FrameGrid,
    temporal: SeqLayout,
}

fn batch_of(cfg: &ModelConfig, shape: &[usize]) -> Result<usize> {
    let clip = cfg.video_shape();
    match shape {
        [b, rest @ ..] if rest == clip && *b > 0 => Ok(*b),
        s if s == clip => Ok(1),
        s => shape_err(format!("input {s:?} does not match clip shape {clip:?}")),
    }
}

/// Token-wise residual guidance handles for one block, if enabled.
fn guidance(p: &Bound<'_>, prefix: &str, z: Var) -> Option<Guidance> {
    Some(Guidance {
        z,
        lambda1: p.try_get(&format!("{prefix}.{LAMBDA1}"))?,
        lambda2: p.try_get(&format!("{prefix}.{LAMBDA2}"))?,
    })
}

#[allow(clippy::too_many_arguments)]
fn mixer<T: Real>(
    g: &mut Graph<T>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    ctx: &Ctx,
    prefix: &str,
    kind: BlockKind,
    x: Var,
    guide: Option<&Guidance>,
) -> Result<Var> {
    let attn = format!("{prefix}.attn");
    let mixing = match kind {
        BlockKind::Spatial => Mixing::Spatial(ctx.grid),
        BlockKind::Temporal => Mixing::Temporal(ctx.temporal),
        BlockKind::Channel => {
            let cp = ChannelAttnParams::bind(p, &attn);
            return channel_sublayer(g, x, &cp, ctx.batch, guide);
        }
    };
    match cfg.attention {
        AttentionKind::Wkv => wkv_sublayer(g, x, &WkvParams::bind(p, &attn), mixing, guide),
        AttentionKind::Softmax => {
            let get = |n: &str| p.get(&format!("{attn}.{n}"));
            let q = g.linear(x, get("w_q"), None);
            let k = g.linear(x, get("w_k"), None);
            let v = g.linear(x, get("w_v"), None);
            let w_o = get("w_o");
            apply_resvgm(g, v, guide, |g, v_in| {
                let y = g.softmax_attention(q, k, v_in, mixing.layout())?;
                Ok(g.linear(y, w_o, None))
            })
        }
    }
}

/// One block: two adaLN-Zero residual branches, attention then FFN.
#[allow(clippy::too_many_arguments)]
fn block<T: Real>(
    g: &mut Graph<T>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    ctx: &Ctx,
    i: usize,
    kind: BlockKind,
    x: Var,
    cond: Var,
    z: Var,
) -> Result<Var> {
    let d = cfg.d;
    let prefix = block_prefix(i, kind);
    let get = |n: &str| p.get(&format!("{prefix}.{n}"));
    let ada = g.linear(cond, get("ada.w"), Some(get("ada.b")));
    let part: Vec<Var> = (0..6).map(|j| g.slice_cols(ada, j * d, d)).collect();
    let (scale1, shift1, gate1, scale2, shift2, gate2) = (part[0], part[1], part[2], part[3], part[4], part[5]);

    let h = g.layer_norm(x, None, None, LN_EPS);
    let h = g.modulate(h, scale1, shift1);
    let gd = guidance(p, &prefix, z);
    let h = mixer(g, p, cfg, ctx, &prefix, kind, h, gd.as_ref())?;
    let h = g.gate(h, gate1);
    let x = g.add(x, h);

    let h = g.layer_norm(x, None, None, LN_EPS);
    let h = g.modulate(h, scale2, shift2);
    let h = g.linear(h, get("ffn.w1"), Some(get("ffn.b1")));
    let h = g.gelu(h);
    let h = g.linear(h, get("ffn.w2"), Some(get("ffn.b2")));
    let h = g.gate(h, gate2);
    Ok(g.add(x, h))
}

/// Timestep conditioning `[B, d]` after the output SiLU shared by all
/// adaLN projections.
pub fn timestep_cond<T: Real>(g: &mut Graph<T>, p: &Bound<'_>, d: usize, t: &[usize]) -> Var {
    let feats: Vec<T> = t.iter().flat_map(|&ti| timestep_features(ti, d)).map(T::of).collect();
    let f = g.constant(Tensor::new(&[t.len(), d], feats).unwrap());
    let h = g.linear(f, p.get("time.w1"), Some(p.get("time.b1")));
    let h = g.silu(h);
    let c = g.linear(h, p.get("time.w2"), Some(p.get("time.b2")));
    g.silu(c)
}

/// Patch embedding. Returns `(z, tokens)` where `tokens = z + positional`.
pub fn embed<T: Real>(g: &mut Graph<T>, p: &Bound<'_>, cfg: &ModelConfig, x: Var, batch: usize) -> (Var, Var) {
    let d = cfg.d;
    let (s, f) = (cfg.sites(), cfg.frames);
    let rows = batch * f * s;
    let patches = g.gather(x, Rc::new(patchify_index(cfg, batch)), &[rows, cfg.patch_dim()]);
    let z = g.linear(patches, p.get("patch.w"), Some(p.get("patch.b")));
    let site_idx = (0..rows * d).map(|i| (i / d % s) * d + i % d).collect();
    let frame_idx = (0..rows * d).map(|i| (i / d / s % f) * d + i % d).collect();
    let ps = g.gather(p.get("pos.spatial"), Rc::new(site_idx), &[rows, d]);
    let pt = g.gather(p.get("pos.temporal"), Rc::new(frame_idx), &[rows, d]);
    let tokens = g.add(z, ps);
    let tokens = g.add(tokens, pt);
    (z, tokens)
}

/// Final layer norm, head and unpatchify back to the shape of `like`.
pub fn decode<T: Real>(
    g: &mut Graph<T>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    h: Var,
    shape: &[usize],
    batch: usize,
) -> Var {
    let h = g.layer_norm(h, Some(p.get("final.ln.w")), Some(p.get("final.ln.b")), LN_EPS);
    let out = g.linear(h, p.get("head.w"), Some(p.get("head.b")));
    g.gather(out, Rc::new(unpatchify_index(cfg, batch)), shape)
}

/// Noise prediction for videos `x` of shape `[B, F, C, H, W]` (or a single
/// `[F, C, H, W]` clip) at timesteps `t`, one per clip.
pub fn forward<T: Real>(g: &mut Graph<T>, p: &Bound<'_>, cfg: &ModelConfig, x: Var, t: &[usize]) -> Result<Forward> {
    let shape = g.shape(x).to_vec();
    let batch = batch_of(cfg, &shape)?;
    if t.len() != batch {
        return shape_err(format!("{} timesteps for {batch} clips", t.len()));
    }
    let ctx = Ctx {
        batch,
        grid: FrameGrid {
            frames: batch * cfg.frames,
            h: cfg.grid_h(),
            w: cfg.grid_w(),
        },
        temporal: SeqLayout::temporal(batch, cfg.frames, cfg.sites()),
    };
    let cond = timestep_cond(g, p, cfg.d, t);
    let (z, tokens) = embed(g, p, cfg, x, batch);
    let mut h = tokens;
    for (i, kind) in cfg.kinds() {
        h = block(g, p, cfg, &ctx, i, kind, h, cond, z)?;
    }
    let out = decode(g, p, cfg, h, &shape, batch);
    Ok(Forward { out, z, tokens })
}

/// Inference-only forward on concrete tensors.
pub fn predict<T: Real>(params: &ParamStore<T>, cfg: &ModelConfig, x: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let p = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let f = forward(&mut g, &p, cfg, xv, t)?;
    Ok(g.value(f.out).clone())
}
