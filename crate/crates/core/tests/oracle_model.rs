//! The full denoiser and channel attention against dense re-derivations
//! written with plain loops. Only the quadratic WKV reference is shared.

#![allow(clippy::needless_range_loop)]

use lindiff_core::backbone::{param_specs, predict};
use lindiff_core::channel::channel_attention;
use lindiff_core::numerics::ParamStore;
use lindiff_core::wkv::{wkv_reference, SeqLayout};
use lindiff_core::{ModelConfig, RngStream, Tensor};

type Mat = Vec<Vec<f64>>;

fn matmul(x: &Mat, w: &Tensor<f64>) -> Mat {
    let (k, m) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..m)
                .map(|j| (0..k).map(|i| row[i] * w.data()[i * m + j]).sum())
                .collect()
        })
        .collect()
}

fn add_bias(x: &mut Mat, b: &Tensor<f64>) {
    for row in x {
        for (v, bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn layer_norm(x: &Mat, affine: Option<(&Tensor<f64>, &Tensor<f64>)>) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(c, v)| {
                    let y = (v - mean) / (var + 1e-6).sqrt();
                    affine.map_or(y, |(w, b)| y * w.data()[c] + b.data()[c])
                })
                .collect()
        })
        .collect()
}

fn to_tensor(x: &Mat) -> Tensor<f64> {
    Tensor::new(&[x.len(), x[0].len()], x.concat()).unwrap()
}

fn from_tensor(t: &Tensor<f64>) -> Mat {
    t.data().chunks(t.last_dim()).map(<[f64]>::to_vec).collect()
}

/// `Y[n, i] = sum_j softmax_j(e^tau <q_i, k_j> / |q_i| |k_j|) V[n, j]` per group,
/// with channels as the attended axis.
fn dense_channel(q: &Mat, k: &Mat, v: &Mat, tau: f64, groups: usize) -> Mat {
    let (rows, d) = (q.len(), q[0].len());
    let n = rows / groups;
    let mut out = vec![vec![0.0; d]; rows];
    for gi in 0..groups {
        let r = gi * n..(gi + 1) * n;
        let col = |m: &Mat, c: usize| -> Vec<f64> { r.clone().map(|i| m[i][c]).collect() };
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        for i in 0..d {
            let qi = col(q, i);
            let logits: Vec<f64> = (0..d)
                .map(|j| {
                    let kj = col(k, j);
                    tau.exp() * qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (norm(&qi) * norm(&kj))
                })
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = e.iter().sum();
            for (row, t) in r.clone().enumerate() {
                out[t][i] = (0..d).map(|j| e[j] / total * v[gi * n + row][j]).sum();
            }
        }
    }
    out
}

struct Dims {
    b: usize,
    f: usize,
    gh: usize,
    gw: usize,
    d: usize,
}

impl Dims {
    fn token(&self, b: usize, f: usize, i: usize, j: usize) -> usize {
        ((b * self.f + f) * self.gh + i) * self.gw + j
    }
}

fn shift_spatial(x: &Mat, k: &Tensor<f64>, dm: &Dims) -> Mat {
    let mut y = vec![vec![0.0; dm.d]; x.len()];
    for b in 0..dm.b {
        for f in 0..dm.f {
            for i in 0..dm.gh {
                for j in 0..dm.gw {
                    for a in 0..3 {
                        for bb in 0..3 {
                            let (si, sj) = (i as isize + a as isize - 1, j as isize + bb as isize - 1);
                            if si < 0 || sj < 0 || si >= dm.gh as isize || sj >= dm.gw as isize {
                                continue;
                            }
                            let src = dm.token(b, f, si as usize, sj as usize);
                            for c in 0..dm.d {
                                y[dm.token(b, f, i, j)][c] += k.data()[(a * 3 + bb) * dm.d + c] * x[src][c];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn shift_temporal(x: &Mat, k: &Tensor<f64>, dm: &Dims) -> Mat {
    let mut y = vec![vec![0.0; dm.d]; x.len()];
    for b in 0..dm.b {
        for f in 0..dm.f {
            for i in 0..dm.gh {
                for j in 0..dm.gw {
                    for a in 0..3 {
                        let sf = f as isize + a as isize - 1;
                        if sf < 0 || sf >= dm.f as isize {
                            continue;
                        }
                        let src = dm.token(b, sf as usize, i, j);
                        for c in 0..dm.d {
                            y[dm.token(b, f, i, j)][c] += k.data()[a * dm.d + c] * x[src][c];
                        }
                    }
                }
            }
        }
    }
    y
}

fn dense_forward(p: &ParamStore<f64>, cfg: &ModelConfig, x: &Tensor<f64>, t: &[usize]) -> Tensor<f64> {
    let get = |n: &str| p.get(n).unwrap_or_else(|| panic!("missing {n}"));
    let (b, f, c, h, w, pt) = (t.len(), cfg.frames, cfg.channels, cfg.height, cfg.width, cfg.patch);
    let dm = Dims {
        b,
        f,
        gh: h / pt,
        gw: w / pt,
        d: cfg.d,
    };
    let d = cfg.d;
    let sites = dm.gh * dm.gw;
    let pix = |bi: usize, fi: usize, ch: usize, y: usize, xx: usize| (((bi * f + fi) * c + ch) * h + y) * w + xx;

    // patch rows in (clip, frame, site) order, features in (channel, dy, dx)
    let mut patches = Vec::new();
    for bi in 0..b {
        for fi in 0..f {
            for i in 0..dm.gh {
                for j in 0..dm.gw {
                    let mut row = Vec::new();
                    for ch in 0..c {
                        for dy in 0..pt {
                            for dx in 0..pt {
                                row.push(x.data()[pix(bi, fi, ch, i * pt + dy, j * pt + dx)]);
                            }
                        }
                    }
                    patches.push(row);
                }
            }
        }
    }
    let mut z = matmul(&patches, get("patch.w"));
    add_bias(&mut z, get("patch.b"));
    let mut hcur = z.clone();
    for (r, row) in hcur.iter_mut().enumerate() {
        let (site, frame) = (r % sites, r / sites % f);
        for ch in 0..d {
            row[ch] += get("pos.spatial").data()[site * d + ch] + get("pos.temporal").data()[frame * d + ch];
        }
    }

    let half = d / 2;
    let feats: Mat = t
        .iter()
        .map(|&ti| {
            let freq = |i: usize| (-(10_000f64.ln()) * i as f64 / (half - 1) as f64).exp();
            let mut v: Vec<f64> = (0..half).map(|i| (ti as f64 * freq(i)).sin()).collect();
            v.extend((0..half).map(|i| (ti as f64 * freq(i)).cos()));
            v
        })
        .collect();
    let mut c1 = matmul(&feats, get("time.w1"));
    add_bias(&mut c1, get("time.b1"));
    let c1: Mat = c1.iter().map(|r| r.iter().map(|&v| v * sigmoid(v)).collect()).collect();
    let mut cond = matmul(&c1, get("time.w2"));
    add_bias(&mut cond, get("time.b2"));
    let cond: Mat = cond
        .iter()
        .map(|r| r.iter().map(|&v| v * sigmoid(v)).collect())
        .collect();

    let per_clip = f * sites;
    let per = if cfg.channel_blocks { 3 } else { 2 };
    for i in 0..cfg.n_triplets * per {
        let kind = ["spatial", "temporal", "channel"][i % per];
        let pre = format!("blocks.{i}.{kind}");
        let bp = |n: &str| get(&format!("{pre}.{n}"));
        let mut ada = matmul(&cond, bp("ada.w"));
        add_bias(&mut ada, bp("ada.b"));
        let part = |r: usize, j: usize, ch: usize| ada[r / per_clip][j * d + ch];

        let normed = layer_norm(&hcur, None);
        let m: Mat = normed
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(|(ch, v)| v * (1.0 + part(r, 0, ch)) + part(r, 1, ch))
                    .collect()
            })
            .collect();
        let l = |n: &str| p.get(&format!("{pre}.{n}"));
        let guided = |v: &Mat| -> Mat {
            match l("lambda1") {
                Some(l1) => v
                    .iter()
                    .zip(&z)
                    .map(|(vr, zr)| {
                        vr.iter()
                            .zip(zr)
                            .enumerate()
                            .map(|(ch, (a, zz))| a + l1.data()[ch] * zz)
                            .collect()
                    })
                    .collect(),
                None => v.clone(),
            }
        };
        let residual = |out: &mut Mat, v: &Mat| {
            if let Some(l2) = l("lambda2") {
                for ((o, vr), zr) in out.iter_mut().zip(v).zip(&z) {
                    for ch in 0..d {
                        o[ch] += l2.data()[ch] * (zr[ch] - vr[ch]);
                    }
                }
            }
        };
        let mut mixed = if kind == "channel" {
            let (q, k, v) = (
                matmul(&m, bp("attn.w_q")),
                matmul(&m, bp("attn.w_k")),
                matmul(&m, bp("attn.w_v")),
            );
            let y = dense_channel(&q, &k, &guided(&v), bp("attn.temperature").data()[0], b);
            let mut o = matmul(&y, bp("attn.w_o"));
            residual(&mut o, &v);
            o
        } else {
            let (xs, layout) = if kind == "spatial" {
                (
                    shift_spatial(&m, bp("attn.shift"), &dm),
                    SeqLayout::spatial(b * f, sites),
                )
            } else {
                (
                    shift_temporal(&m, bp("attn.shift"), &dm),
                    SeqLayout::temporal(b, f, sites),
                )
            };
            let (r, k, v) = (
                matmul(&xs, bp("attn.w_r")),
                matmul(&xs, bp("attn.w_k")),
                matmul(&xs, bp("attn.w_v")),
            );
            let y = wkv_reference(
                &to_tensor(&k),
                &to_tensor(&guided(&v)),
                bp("attn.decay"),
                bp("attn.bonus"),
                layout,
            )
            .unwrap();
            let y = from_tensor(&y);
            let gated: Mat = y
                .iter()
                .zip(&r)
                .map(|(yr, rr)| yr.iter().zip(rr).map(|(a, g)| a * sigmoid(*g)).collect())
                .collect();
            let mut o = matmul(&gated, bp("attn.w_o"));
            residual(&mut o, &v);
            o
        };
        for (r, row) in mixed.iter_mut().enumerate() {
            for ch in 0..d {
                hcur[r][ch] += part(r, 2, ch) * row[ch];
            }
        }

        let normed = layer_norm(&hcur, None);
        let m: Mat = normed
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(|(ch, v)| v * (1.0 + part(r, 3, ch)) + part(r, 4, ch))
                    .collect()
            })
            .collect();
        let mut h1 = matmul(&m, bp("ffn.w1"));
        add_bias(&mut h1, bp("ffn.b1"));
        let h1: Mat = h1.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        let mut h2 = matmul(&h1, bp("ffn.w2"));
        add_bias(&mut h2, bp("ffn.b2"));
        for (r, row) in h2.iter().enumerate() {
            for ch in 0..d {
                hcur[r][ch] += part(r, 5, ch) * row[ch];
            }
        }
    }

    let normed = layer_norm(&hcur, Some((get("final.ln.w"), get("final.ln.b"))));
    let mut out = matmul(&normed, get("head.w"));
    add_bias(&mut out, get("head.b"));
    let mut video = vec![0.0; x.len()];
    let mut r = 0;
    for bi in 0..b {
        for fi in 0..f {
            for i in 0..dm.gh {
                for j in 0..dm.gw {
                    let mut col = 0;
                    for ch in 0..c {
                        for dy in 0..pt {
                            for dx in 0..pt {
                                video[pix(bi, fi, ch, i * pt + dy, j * pt + dx)] = out[r][col];
                                col += 1;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
    Tensor::new(x.shape(), video).unwrap()
}

fn random_params(cfg: &ModelConfig, rng: &mut RngStream) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for s in param_specs(cfg) {
        p.insert(&s.name, Tensor::randn(&s.shape, 0.4, rng)).unwrap();
    }
    p
}

fn tiny() -> ModelConfig {
    ModelConfig {
        d: 16,
        n_triplets: 1,
        patch: 2,
        frames: 2,
        channels: 2,
        height: 8,
        width: 8,
        ffn_mult: 2,
        t_max: 50,
        ..ModelConfig::toy()
    }
}

#[test]
fn full_model_matches_dense_oracle() {
    let cfg = tiny();
    for seed in 0..3 {
        let mut rng = RngStream::new(seed);
        let params = random_params(&cfg, &mut rng);
        let x = Tensor::randn(&[2, 2, 2, 8, 8], 1.0, &mut rng);
        let t = [1 + seed as usize, 37];
        let fast = predict(&params, &cfg, &x, &t).unwrap();
        let slow = dense_forward(&params, &cfg, &x, &t);
        let err = fast.max_abs_diff(&slow);
        assert!(err <= 1e-8, "seed {seed}: {err:e}");
    }
}

#[test]
fn model_without_channel_blocks_or_guidance_matches_dense_oracle() {
    let cfg = ModelConfig {
        channel_blocks: false,
        resvgm: false,
        n_triplets: 2,
        ..tiny()
    };
    let mut rng = RngStream::new(11);
    let params = random_params(&cfg, &mut rng);
    let x = Tensor::randn(&[1, 2, 2, 8, 8], 1.0, &mut rng);
    let fast = predict(&params, &cfg, &x, &[20]).unwrap();
    let slow = dense_forward(&params, &cfg, &x, &[20]);
    assert!(fast.max_abs_diff(&slow) <= 1e-8);
}

#[test]
fn channel_attention_matches_dense_oracle() {
    let mut rng = RngStream::new(5);
    for _ in 0..50 {
        let d = rng.range_inclusive(1, 8);
        let groups = rng.range_inclusive(1, 3);
        let n = groups * rng.range_inclusive(1, 64 / groups);
        let tau = rng.next_uniform() * 4.0 - 2.0;
        let q = Tensor::<f64>::randn(&[n, d], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(&[n, d], 1.0, &mut rng);
        let v = Tensor::<f64>::randn(&[n, d], 1.0, &mut rng);
        let (fast, _) = channel_attention(&q, &k, &v, tau, groups).unwrap();
        let slow = dense_channel(&from_tensor(&q), &from_tensor(&k), &from_tensor(&v), tau, groups);
        let err = fast.max_abs_diff(&to_tensor(&slow));
        assert!(err < 1e-12, "n {n} d {d} groups {groups}: {err:e}");
    }
}
