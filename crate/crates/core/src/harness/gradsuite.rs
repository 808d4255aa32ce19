//! Finite-difference checks of every learnable operation on randomized
//! small shapes at 64-bit precision.

use crate::backbone::config::ModelConfig;
use crate::backbone::model::{decode, embed, forward};
use crate::backbone::params::param_specs;
use crate::error::Result;
use crate::numerics::gradcheck::{grad_check_many, GradCheckReport};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Bound, ParamStore};
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;
use crate::resvgm::{apply_resvgm, Guidance};
use crate::wkv::{FrameGrid, SeqLayout};

pub const EPS: f64 = 1e-5;

/// Spread of learned weights at the composite test points. Wider draws saturate GELU units,
/// whose true gradients (~1e-10) then sit below what a central difference
/// can resolve at 64-bit.
pub const DEEP_SCALE: f64 = 0.3;

/// Worst relative error of one operation across all seeds.
#[derive(Clone, Debug)]
pub struct OpResult {
    pub name: &'static str,
    pub seeds: usize,
    pub worst: GradCheckReport,
}

pub const OPS: [&str; 10] = [
    "shift_spatial",
    "shift_temporal",
    "wkv_scan",
    "channel_attention",
    "softmax_attention",
    "adaln",
    "ffn",
    "embed_head",
    "resvgm",
    "full_model",
];

fn randn(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn tiny_model(rng: &mut RngStream) -> ModelConfig {
    let d = 4 + 2 * rng.range_inclusive(0, 2);
    ModelConfig {
        d,
        n_triplets: 1,
        patch: 2,
        frames: 2,
        channels: 1,
        height: 4,
        width: 4,
        ffn_mult: 2,
        t_max: 50,
        ..ModelConfig::toy()
    }
}

/// One randomized finite-difference check of `op`.
pub fn check_op(op: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngStream::with_stream(seed, 0x6772_6164);
    let d = rng.range_inclusive(1, 4);
    match op {
        "shift_spatial" => {
            let grid = FrameGrid {
                frames: rng.range_inclusive(1, 2),
                h: rng.range_inclusive(1, 4),
                w: rng.range_inclusive(1, 4),
            };
            let xs = [randn(&[grid.tokens(), d], &mut rng), randn(&[3, 3, d], &mut rng)];
            let probe = randn(&[grid.tokens(), d], &mut rng);
            grad_check_many(
                |g, v| {
                    let y = g.shift_spatial(v[0], v[1], grid).expect("consistent shapes");
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "shift_temporal" => {
            let layout = SeqLayout::temporal(
                rng.range_inclusive(1, 2),
                rng.range_inclusive(1, 5),
                rng.range_inclusive(1, 3),
            );
            let xs = [randn(&[layout.tokens(), d], &mut rng), randn(&[3, d], &mut rng)];
            let probe = randn(&[layout.tokens(), d], &mut rng);
            grad_check_many(
                |g, v| {
                    let y = g.shift_temporal(v[0], v[1], layout).expect("consistent shapes");
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "wkv_scan" => {
            let layout = SeqLayout {
                outer: rng.range_inclusive(1, 2),
                len: rng.range_inclusive(1, 9),
                inner: rng.range_inclusive(1, 2),
            };
            let n = layout.tokens();
            let xs = [
                randn(&[n, d], &mut rng),
                randn(&[n, d], &mut rng),
                randn(&[d], &mut rng),
                randn(&[d], &mut rng),
            ];
            let probe = randn(&[n, d], &mut rng);
            grad_check_many(
                |g, v| {
                    let y = g.wkv(v[0], v[1], v[2], v[3], layout).expect("consistent shapes");
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "channel_attention" | "softmax_attention" => {
            let groups = rng.range_inclusive(1, 2);
            let n = groups * rng.range_inclusive(1, 6);
            let xs = [
                randn(&[n, d], &mut rng),
                randn(&[n, d], &mut rng),
                randn(&[n, d], &mut rng),
                randn(&[1], &mut rng),
            ];
            let probe = randn(&[n, d], &mut rng);
            let channel = op == "channel_attention";
            grad_check_many(
                |g, v| {
                    let y = if channel {
                        g.channel_attention(v[0], v[1], v[2], v[3], groups)
                    } else {
                        g.softmax_attention(v[0], v[1], v[2], SeqLayout::spatial(groups, n / groups))
                    };
                    g.weighted_sum(y.expect("consistent shapes"), &probe)
                },
                &xs,
                EPS,
            )
        }
        "adaln" => {
            let b = rng.range_inclusive(1, 2);
            let n = b * rng.range_inclusive(1, 4);
            let d = d + 1;
            let xs = [
                randn(&[n, d], &mut rng),
                randn(&[b, d], &mut rng),
                Tensor::randn(&[d, 6 * d], DEEP_SCALE, &mut rng),
                Tensor::randn(&[6 * d], DEEP_SCALE, &mut rng),
            ];
            let probe = randn(&[n, d], &mut rng);
            grad_check_many(
                |g, v| {
                    let c = g.silu(v[1]);
                    let ada = g.linear(c, v[2], Some(v[3]));
                    let scale = g.slice_cols(ada, 0, d);
                    let shift = g.slice_cols(ada, d, d);
                    let gate = g.slice_cols(ada, 2 * d, d);
                    let h = g.layer_norm(v[0], None, None, 1e-6);
                    let h = g.modulate(h, scale, shift);
                    let h = g.gelu(h);
                    let h = g.gate(h, gate);
                    let y = g.add(v[0], h);
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "ffn" => {
            let (n, hidden) = (rng.range_inclusive(1, 5), rng.range_inclusive(1, 8));
            let xs = [
                randn(&[n, d], &mut rng),
                randn(&[d, hidden], &mut rng),
                randn(&[hidden], &mut rng),
                randn(&[hidden, d], &mut rng),
                randn(&[d], &mut rng),
            ];
            let probe = randn(&[n, d], &mut rng);
            grad_check_many(
                |g, v| {
                    let h = g.linear(v[0], v[1], Some(v[2]));
                    let h = g.gelu(h);
                    let y = g.linear(h, v[3], Some(v[4]));
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "embed_head" => {
            let cfg = tiny_model(&mut rng);
            let template = ParamStore::<f64>::from_specs(&param_specs(&cfg), &mut rng);
            let names = [
                "patch.w",
                "patch.b",
                "pos.spatial",
                "pos.temporal",
                "final.ln.w",
                "final.ln.b",
                "head.w",
                "head.b",
            ];
            let mut xs: Vec<Tensor<f64>> = template.tensors().iter().map(|t| randn(t.shape(), &mut rng)).collect();
            let video = [1, cfg.frames, cfg.channels, cfg.height, cfg.width];
            xs.push(randn(&video, &mut rng));
            let probe = randn(&video, &mut rng);
            // only embedding and head parameters influence this readout
            let used: Vec<bool> = template.names().iter().map(|n| names.contains(&n.as_str())).collect();
            grad_check_many(
                |g, v| {
                    let (params, x) = v.split_at(v.len() - 1);
                    let vars: Vec<Var> = params
                        .iter()
                        .zip(&used)
                        .map(|(&p, &u)| if u { p } else { g.constant(Tensor::zeros(&[0])) })
                        .collect();
                    let bound = Bound::from_vars(&template, vars).expect("store order");
                    let (_, tokens) = embed(g, &bound, &cfg, x[0], 1);
                    let y = decode(g, &bound, &cfg, tokens, &video, 1);
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "resvgm" => {
            let n = rng.range_inclusive(1, 6);
            let xs = [
                randn(&[n, d], &mut rng),
                randn(&[n, d], &mut rng),
                randn(&[d], &mut rng),
                randn(&[d], &mut rng),
                randn(&[n, d], &mut rng),
                randn(&[d], &mut rng),
                randn(&[d], &mut rng),
            ];
            let probe = randn(&[n, d], &mut rng);
            let layout = SeqLayout::single(n);
            grad_check_many(
                |g, v| {
                    let gd = Guidance {
                        z: v[4],
                        lambda1: v[5],
                        lambda2: v[6],
                    };
                    let y = apply_resvgm(g, v[1], Some(&gd), |g, vin| g.wkv(v[0], vin, v[2], v[3], layout))
                        .expect("consistent shapes");
                    g.weighted_sum(y, &probe)
                },
                &xs,
                EPS,
            )
        }
        "full_model" => full_model(&mut rng),
        other => panic!("unknown operation {other}"),
    }
}

/// One spatial, temporal and channel block with every parameter away from
/// its initial value, on a two-frame 4x4 input.
fn full_model(rng: &mut RngStream) -> Result<GradCheckReport> {
    let cfg = tiny_model(rng);
    let template = ParamStore::<f64>::from_specs(&param_specs(&cfg), rng);
    let mut xs: Vec<Tensor<f64>> = template
        .tensors()
        .iter()
        .map(|t| Tensor::randn(t.shape(), DEEP_SCALE, rng))
        .collect();
    let video = [1, cfg.frames, cfg.channels, cfg.height, cfg.width];
    xs.push(randn(&video, rng));
    let probe = randn(&video, rng);
    let t = rng.range_inclusive(1, cfg.t_max);
    grad_check_many(
        |g: &mut Graph<f64>, v: &[Var]| {
            let (params, x) = v.split_at(v.len() - 1);
            let bound = Bound::from_vars(&template, params.to_vec()).expect("store order");
            let f = forward(g, &bound, &cfg, x[0], &[t]).expect("consistent shapes");
            g.weighted_sum(f.out, &probe)
        },
        &xs,
        EPS,
    )
}

/// Checks `ops` on seeds `0..seeds`, keeping the worst report per op.
pub fn gradient_suite(ops: &[&'static str], seeds: u64) -> Result<Vec<OpResult>> {
    ops.iter()
        .map(|&name| {
            let mut worst: Option<GradCheckReport> = None;
            for seed in 0..seeds {
                let r = check_op(name, seed)?;
                if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err) {
                    worst = Some(r);
                }
            }
            Ok(OpResult {
                name,
                seeds: seeds as usize,
                worst: worst.expect("at least one seed"),
            })
        })
        .collect()
}
