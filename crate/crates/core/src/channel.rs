//! Global channel attention for the channel block.
//!
//! Attention runs over a `D x D` channel affinity built from L2-normalized
//! channel rows of `Q` and `K` across all tokens of a clip, so cost is
//! `Theta(D^2 N)`: linear in the token count.

use crate::error::{shape_err, Result};
use crate::numerics::graph::{BackCtx, Backward, Graph, Var};
use crate::numerics::params::{Bound, Init, ParamSpec};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::resvgm::{apply_resvgm, Guidance};

/// Floor applied to channel norms before normalizing.
pub const NORM_EPS: f64 = 1e-12;

struct Saved<T> {
    /// Row-stochastic `D x D` attention per group.
    attn: Vec<T>,
    qnorm: Vec<T>,
    knorm: Vec<T>,
}

fn col_norms<T: Real>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut s = vec![T::zero(); d];
    for row in x[..n * d].chunks_exact(d) {
        for (a, &v) in s.iter_mut().zip(row) {
            *a += v * v;
        }
    }
    s.into_iter().map(|v| v.sqrt()).collect()
}

fn check<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    tau: &Tensor<T>,
    groups: usize,
) -> Result<(usize, usize)> {
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return shape_err(format!(
            "channel attention: q {:?} k {:?} v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if tau.len() != 1 {
        return shape_err("channel attention: temperature must be a scalar");
    }
    let d = q.last_dim();
    if groups == 0 || q.rows() == 0 || !q.rows().is_multiple_of(groups) || d == 0 {
        return shape_err(format!(
            "channel attention: {} tokens cannot form {groups} non-empty clips",
            q.rows()
        ));
    }
    Ok((q.rows() / groups, d))
}

fn forward<T: Real>(q: &[T], k: &[T], v: &[T], tau: T, groups: usize, n: usize, d: usize) -> (Vec<T>, Saved<T>) {
    let temp = tau.exp();
    let eps = T::of(NORM_EPS);
    let mut out = vec![T::zero(); q.len()];
    let mut saved = Saved {
        attn: vec![T::zero(); groups * d * d],
        qnorm: Vec::with_capacity(groups * d),
        knorm: Vec::with_capacity(groups * d),
    };
    for gi in 0..groups {
        let span = gi * n * d..(gi + 1) * n * d;
        let (qg, kg, vg) = (&q[span.clone()], &k[span.clone()], &v[span.clone()]);
        let nq = col_norms(qg, n, d);
        let nk = col_norms(kg, n, d);
        let a = &mut saved.attn[gi * d * d..(gi + 1) * d * d];
        // Q^T K
        T::gemm(
            d,
            n,
            d,
            T::one(),
            qg,
            1,
            d as isize,
            kg,
            d as isize,
            1,
            T::zero(),
            a,
            d as isize,
            1,
        );
        for (c, row) in a.chunks_exact_mut(d).enumerate() {
            let mut m = T::neg_infinity();
            for (c2, s) in row.iter_mut().enumerate() {
                *s = *s * temp / (nq[c].max(eps) * nk[c2].max(eps));
                m = m.max(*s);
            }
            let mut z = T::zero();
            for s in row.iter_mut() {
                *s = (*s - m).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
        }
        // Y = V A^T
        T::gemm(
            n,
            d,
            d,
            T::one(),
            vg,
            d as isize,
            1,
            a,
            1,
            d as isize,
            T::zero(),
            &mut out[span],
            d as isize,
            1,
        );
        saved.qnorm.extend(nq);
        saved.knorm.extend(nk);
    }
    (out, saved)
}

/// Channel attention over `groups` clips of equal token count. Returns the
/// `[N, D]` output (before the output projection) and the attention
/// matrices, `groups` blocks of `D x D`.
pub fn channel_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    tau: T,
    groups: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, d) = check(q, k, v, &Tensor::scalar(tau), groups)?;
    let (out, saved) = forward(q.data(), k.data(), v.data(), tau, groups, n, d);
    Ok((Tensor::new(q.shape(), out)?, saved.attn))
}

struct ChannelOp<T> {
    q: Var,
    k: Var,
    v: Var,
    tau: Var,
    groups: usize,
    saved: Saved<T>,
}

/// Backward of `x / max(|x|, eps)` for one column given the normalized
/// column `xn` and its gradient `dxn`; writes into `dx`.
fn norm_backward<T: Real>(xn: &[T], dxn: &[T], norm: T, dx: &mut [T], d: usize, c: usize) {
    let eps = T::of(NORM_EPS);
    if norm > eps {
        let dot: T = xn
            .iter()
            .skip(c)
            .step_by(d)
            .zip(dxn.iter().skip(c).step_by(d))
            .map(|(&a, &b)| a * b)
            .sum();
        for ((o, &a), &b) in dx
            .iter_mut()
            .skip(c)
            .step_by(d)
            .zip(xn.iter().skip(c).step_by(d))
            .zip(dxn.iter().skip(c).step_by(d))
        {
            *o = (b - a * dot) / norm;
        }
    } else {
        for (o, &b) in dx.iter_mut().skip(c).step_by(d).zip(dxn.iter().skip(c).step_by(d)) {
            *o = b / eps;
        }
    }
}

impl<T: Real> Backward<T> for ChannelOp<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.q, self.k, self.v, self.tau]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (q, k, v) = (ctx.value(self.q), ctx.value(self.k), ctx.value(self.v));
        let tau = ctx.value(self.tau).data()[0];
        let temp = tau.exp();
        let eps = T::of(NORM_EPS);
        let d = q.last_dim();
        let n = q.rows() / self.groups;
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); q.len()];
        let mut dv = vec![T::zero(); q.len()];
        let mut dtau = T::zero();
        let mut da = vec![T::zero(); d * d];
        let mut qn = vec![T::zero(); n * d];
        let mut kn = vec![T::zero(); n * d];
        let mut dqn = vec![T::zero(); n * d];
        let mut dkn = vec![T::zero(); n * d];
        for gi in 0..self.groups {
            let span = gi * n * d..(gi + 1) * n * d;
            let (qg, kg, vg, gy) = (
                &q.data()[span.clone()],
                &k.data()[span.clone()],
                &v.data()[span.clone()],
                &gout.data()[span.clone()],
            );
            let a = &self.saved.attn[gi * d * d..(gi + 1) * d * d];
            let nq = &self.saved.qnorm[gi * d..(gi + 1) * d];
            let nk = &self.saved.knorm[gi * d..(gi + 1) * d];
            // dV = dY A
            T::gemm(
                n,
                d,
                d,
                T::one(),
                gy,
                d as isize,
                1,
                a,
                d as isize,
                1,
                T::zero(),
                &mut dv[span.clone()],
                d as isize,
                1,
            );
            // dA = dY^T V
            T::gemm(
                d,
                n,
                d,
                T::one(),
                gy,
                1,
                d as isize,
                vg,
                d as isize,
                1,
                T::zero(),
                &mut da,
                d as isize,
                1,
            );
            // softmax backward; da becomes d(normalized gram)
            for (dr, ar) in da.chunks_exact_mut(d).zip(a.chunks_exact(d)) {
                let dot: T = dr.iter().zip(ar).map(|(&x, &y)| x * y).sum();
                for (x, &p) in dr.iter_mut().zip(ar) {
                    *x = p * (*x - dot);
                }
            }
            // S = temp * Gn, so dtau = sum dS * S = sum dS * log-free scores;
            // recover S from the normalized gram recomputed below.
            for (i, row) in qn.chunks_exact_mut(d).enumerate() {
                for c in 0..d {
                    row[c] = qg[i * d + c] / nq[c].max(eps);
                    kn[i * d + c] = kg[i * d + c] / nk[c].max(eps);
                }
            }
            let mut gram = vec![T::zero(); d * d];
            T::gemm(
                d,
                n,
                d,
                T::one(),
                &qn,
                1,
                d as isize,
                &kn,
                d as isize,
                1,
                T::zero(),
                &mut gram,
                d as isize,
                1,
            );
            for (&ds, &gv) in da.iter().zip(&gram) {
                dtau += ds * gv * temp;
            }
            for x in da.iter_mut() {
                *x *= temp;
            }
            // dQn = Kn dG^T, dKn = Qn dG
            T::gemm(
                n,
                d,
                d,
                T::one(),
                &kn,
                d as isize,
                1,
                &da,
                1,
                d as isize,
                T::zero(),
                &mut dqn,
                d as isize,
                1,
            );
            T::gemm(
                n,
                d,
                d,
                T::one(),
                &qn,
                d as isize,
                1,
                &da,
                d as isize,
                1,
                T::zero(),
                &mut dkn,
                d as isize,
                1,
            );
            for c in 0..d {
                norm_backward(&qn, &dqn, nq[c], &mut dq[span.clone()], d, c);
                norm_backward(&kn, &dkn, nk[c], &mut dk[span.clone()], d, c);
            }
        }
        vec![
            Some(Tensor::new(q.shape(), dq).unwrap()),
            Some(Tensor::new(q.shape(), dk).unwrap()),
            Some(Tensor::new(q.shape(), dv).unwrap()),
            Some(Tensor::scalar(dtau)),
        ]
    }
}

impl<T: Real> Graph<T> {
    /// Differentiable [`channel_attention`]; `tau` is a one-element tensor
    /// holding the log-temperature.
    pub fn channel_attention(&mut self, q: Var, k: Var, v: Var, tau: Var, groups: usize) -> Result<Var> {
        let (n, d) = check(self.value(q), self.value(k), self.value(v), self.value(tau), groups)?;
        let t = self.value(tau).data()[0];
        let (out, saved) = forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            t,
            groups,
            n,
            d,
        );
        let out = Tensor::new(self.value(q).shape(), out)?;
        Ok(self.push(
            out,
            ChannelOp {
                q,
                k,
                v,
                tau,
                groups,
                saved,
            },
        ))
    }
}

pub fn channel_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.w_q"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.w_k"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.w_v"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.w_o"), &[d, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.temperature"), &[1], Init::Zeros),
    ]
}

#[derive(Clone, Copy, Debug)]
pub struct ChannelAttnParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    /// Log-temperature; attention logits are scaled by `exp(tau)`.
    pub tau: Var,
}

impl ChannelAttnParams {
    pub fn bind(p: &Bound<'_>, prefix: &str) -> Self {
        let get = |n: &str| p.get(&format!("{prefix}.{n}"));
        Self {
            w_q: get("w_q"),
            w_k: get("w_k"),
            w_v: get("w_v"),
            w_o: get("w_o"),
            tau: get("temperature"),
        }
    }
}

/// Channel attention sub-layer over `clips` clips of tokens in `x`.
pub fn channel_sublayer<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &ChannelAttnParams,
    clips: usize,
    guide: Option<&Guidance>,
) -> Result<Var> {
    let q = g.linear(x, p.w_q, None);
    let k = g.linear(x, p.w_k, None);
    let v = g.linear(x, p.w_v, None);
    apply_resvgm(g, v, guide, |g, v_in| {
        let y = g.channel_attention(q, k, v_in, p.tau, clips)?;
        Ok(g.linear(y, p.w_o, None))
    })
}
