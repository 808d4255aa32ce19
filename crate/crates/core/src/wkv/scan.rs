//! Bidirectional WKV attention.
//!
//! For a sequence of `T` tokens and per-channel decay `w' = softplus(w)`,
//!
//! ```text
//! wkv_t = (sum_{i != t} e^{-(|t-i|-1) w'/T + k_i} v_i + e^{u + k_t} v_t)
//!       / (sum_{i != t} e^{-(|t-i|-1) w'/T + k_i}     + e^{u + k_t})
//! ```
//!
//! evaluated with one forward and one backward prefix scan per channel. Scan
//! states are kept as `(exponent, mantissa)` pairs with a running maximum
//! exponent so no intermediate `exp` overflows. The backward pass uses the
//! transposed scans of the same recurrences plus first-moment scans for the
//! decay derivative, so it is also `O(T * D)`.

use crate::error::{shape_err, Error, Result};
use crate::numerics::graph::{BackCtx, Backward, Graph, Var};
use crate::numerics::ops::{sigmoid, softplus};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::wkv::layout::SeqLayout;

/// Quantities saved by the forward pass for the backward pass.
struct Saved<T> {
    /// `ln` of the denominator at each token.
    log_den: Vec<T>,
    /// `d wkv_t / d delta` at each token.
    ddelta: Vec<T>,
}

fn check_inputs<T: Real>(
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    layout: SeqLayout,
) -> Result<usize> {
    let d = k.last_dim();
    if layout.len == 0 {
        return shape_err("wkv: sequence length must be >= 1");
    }
    if k.shape() != v.shape() {
        return shape_err(format!("wkv: k {:?} vs v {:?}", k.shape(), v.shape()));
    }
    if k.rows() != layout.tokens() {
        return shape_err(format!(
            "wkv: {} tokens but layout {layout:?} covers {}",
            k.rows(),
            layout.tokens()
        ));
    }
    if w.len() != d || u.len() != d {
        return shape_err(format!("wkv: decay/bonus length {}/{} vs width {d}", w.len(), u.len()));
    }
    Ok(d)
}

/// Per-channel decay per unit distance, `softplus(w) / T`.
fn decay<T: Real>(w: &[T], len: usize) -> Vec<T> {
    let n = T::of(len as f64);
    w.iter().map(|&x| softplus(x) / n).collect()
}

/// Scan state: true value is `exp(p) * (a, b)`; `a2`, `b2` hold the distance
/// moments `sum (dist - 1) * term` at the same scale.
#[derive(Clone, Copy)]
struct State<T> {
    p: T,
    a: T,
    b: T,
    a2: T,
    b2: T,
}

impl<T: Real> State<T> {
    fn empty() -> Self {
        Self {
            p: T::neg_infinity(),
            a: T::zero(),
            b: T::zero(),
            a2: T::zero(),
            b2: T::zero(),
        }
    }

    #[inline]
    fn push(&mut self, k: T, v: T, delta: T) {
        let pd = self.p - delta;
        if k >= pd {
            let e = (pd - k).exp();
            self.a2 = (self.a2 + self.a) * e;
            self.b2 = (self.b2 + self.b) * e;
            self.a = self.a * e + v;
            self.b = self.b * e + T::one();
            self.p = k;
        } else {
            let e = (k - pd).exp();
            self.a2 += self.a;
            self.b2 += self.b;
            self.a += v * e;
            self.b += e;
            self.p = pd;
        }
    }
}

fn forward_impl<T: Real>(
    k: &[T],
    v: &[T],
    delta: &[T],
    u: &[T],
    layout: SeqLayout,
    d: usize,
    save: bool,
) -> Result<(Vec<T>, Option<Saved<T>>)> {
    let n = k.len();
    let mut out = vec![T::zero(); n];
    let mut saved = save.then(|| Saved {
        log_den: vec![T::zero(); n],
        ddelta: vec![T::zero(); n],
    });
    let len = layout.len;
    let mut fwd: Vec<State<T>> = vec![State::empty(); len * d];
    let mut st: Vec<State<T>> = vec![State::empty(); d];
    for s in 0..layout.sequences() {
        let (base, stride) = layout.seq(s, d);
        st.iter_mut().for_each(|x| *x = State::empty());
        for t in 0..len {
            let off = base + t * stride;
            fwd[t * d..(t + 1) * d].copy_from_slice(&st);
            for c in 0..d {
                st[c].push(k[off + c], v[off + c], delta[c]);
            }
        }
        st.iter_mut().for_each(|x| *x = State::empty());
        for t in (0..len).rev() {
            let off = base + t * stride;
            for c in 0..d {
                let f = &fwd[t * d + c];
                let bk = &st[c];
                let kt = k[off + c];
                let vt = v[off + c];
                let bonus = u[c] + kt;
                let m = f.p.max(bk.p).max(bonus);
                let ef = (f.p - m).exp();
                let eb = (bk.p - m).exp();
                let eu = (bonus - m).exp();
                let num = ef * f.a + eb * bk.a + eu * vt;
                let den = ef * f.b + eb * bk.b + eu;
                let y = num / den;
                if !y.is_finite() {
                    return Err(Error::Numerical(format!(
                        "wkv: non-finite output at sequence {s}, token {t}, channel {c}"
                    )));
                }
                out[off + c] = y;
                if let Some(sv) = saved.as_mut() {
                    let dnum = -(ef * f.a2 + eb * bk.a2);
                    let dden = -(ef * f.b2 + eb * bk.b2);
                    sv.log_den[off + c] = m + den.ln();
                    sv.ddelta[off + c] = (dnum - y * dden) / den;
                }
            }
            for c in 0..d {
                st[c].push(k[off + c], v[off + c], delta[c]);
            }
        }
    }
    Ok((out, saved))
}

/// Linear-time WKV over every sequence of `layout`. `w` is the raw decay
/// parameter (softplus is applied here), `u` the bonus.
pub fn wkv_scan<T: Real>(
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    layout: SeqLayout,
) -> Result<Tensor<T>> {
    let d = check_inputs(k, v, w, u, layout)?;
    let delta = decay(w.data(), layout.len);
    let (out, _) = forward_impl(k.data(), v.data(), &delta, u.data(), layout, d, false)?;
    Tensor::new(k.shape(), out)
}

/// Literal quadratic evaluation of the WKV formula, used as an oracle.
pub fn wkv_reference<T: Real>(
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    layout: SeqLayout,
) -> Result<Tensor<T>> {
    let d = check_inputs(k, v, w, u, layout)?;
    let len = layout.len;
    let n_len = T::of(len as f64);
    let mut out = vec![T::zero(); k.len()];
    let (kd, vd) = (k.data(), v.data());
    for s in 0..layout.sequences() {
        let (base, stride) = layout.seq(s, d);
        for c in 0..d {
            let wp = softplus(w.data()[c]);
            for t in 0..len {
                let mut num = T::zero();
                let mut den = T::zero();
                for i in 0..len {
                    let idx = base + i * stride + c;
                    let weight = if i == t {
                        (u.data()[c] + kd[idx]).exp()
                    } else {
                        let dist = T::of((t as f64 - i as f64).abs() - 1.0);
                        (-(dist / n_len) * wp + kd[idx]).exp()
                    };
                    num += weight * vd[idx];
                    den += weight;
                }
                out[base + t * stride + c] = num / den;
            }
        }
    }
    Tensor::new(k.shape(), out)
}

/// Transposed-scan state: true value `exp(q) * (s, sw)`.
#[derive(Clone, Copy)]
struct AdjState<T> {
    q: T,
    s: T,
    sw: T,
}

impl<T: Real> AdjState<T> {
    fn empty() -> Self {
        Self {
            q: T::neg_infinity(),
            s: T::zero(),
            sw: T::zero(),
        }
    }

    #[inline]
    fn push(&mut self, l: T, c: T, cw: T, delta: T) {
        let qd = self.q - delta;
        if l >= qd {
            let e = (qd - l).exp();
            self.s = self.s * e + c;
            self.sw = self.sw * e + cw;
            self.q = l;
        } else {
            let e = (l - qd).exp();
            self.s += c * e;
            self.sw += cw * e;
            self.q = qd;
        }
    }
}

struct Grads<T> {
    dk: Vec<T>,
    dv: Vec<T>,
    dw: Vec<T>,
    du: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn backward_impl<T: Real>(
    k: &[T],
    v: &[T],
    w: &[T],
    u: &[T],
    out: &[T],
    saved: &Saved<T>,
    gout: &[T],
    layout: SeqLayout,
    d: usize,
) -> Grads<T> {
    let n = k.len();
    let len = layout.len;
    let delta = decay(w, len);
    let mut dk = vec![T::zero(); n];
    let mut dv = vec![T::zero(); n];
    let mut ddelta = vec![T::zero(); d];
    let mut du = vec![T::zero(); d];
    let mut fwd: Vec<AdjState<T>> = vec![AdjState::empty(); len * d];
    let mut st: Vec<AdjState<T>> = vec![AdjState::empty(); d];
    for s in 0..layout.sequences() {
        let (base, stride) = layout.seq(s, d);
        st.iter_mut().for_each(|x| *x = AdjState::empty());
        for t in 0..len {
            let off = base + t * stride;
            fwd[t * d..(t + 1) * d].copy_from_slice(&st);
            for c in 0..d {
                let g = gout[off + c];
                st[c].push(-saved.log_den[off + c], g, g * out[off + c], delta[c]);
            }
        }
        st.iter_mut().for_each(|x| *x = AdjState::empty());
        for t in (0..len).rev() {
            let off = base + t * stride;
            for c in 0..d {
                let idx = off + c;
                let g = gout[idx];
                let y = out[idx];
                let kt = k[idx];
                let l = -saved.log_den[idx];
                let f = &fwd[t * d + c];
                let bk = &st[c];
                let ef = (kt + f.q).exp();
                let eb = (kt + bk.q).exp();
                let pdiag = (u[c] + kt + l).exp();
                let p = ef * f.s + eb * bk.s + pdiag * g;
                let q = ef * f.sw + eb * bk.sw + pdiag * g * y;
                dv[idx] = p;
                dk[idx] = v[idx] * p - q;
                du[c] += g * pdiag * (v[idx] - y);
                ddelta[c] += g * saved.ddelta[idx];
            }
            for c in 0..d {
                let g = gout[off + c];
                st[c].push(-saved.log_den[off + c], g, g * out[off + c], delta[c]);
            }
        }
    }
    let n_len = T::of(len as f64);
    let dw = ddelta.iter().zip(w).map(|(&g, &x)| g * sigmoid(x) / n_len).collect();
    Grads { dk, dv, dw, du }
}

struct WkvOp<T> {
    k: Var,
    v: Var,
    w: Var,
    u: Var,
    layout: SeqLayout,
    saved: Saved<T>,
}

impl<T: Real> Backward<T> for WkvOp<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.k, self.v, self.w, self.u]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let k = ctx.value(self.k);
        let w = ctx.value(self.w);
        let d = k.last_dim();
        let g = backward_impl(
            k.data(),
            ctx.value(self.v).data(),
            w.data(),
            ctx.value(self.u).data(),
            ctx.out().data(),
            &self.saved,
            gout.data(),
            self.layout,
            d,
        );
        vec![
            Some(Tensor::new(k.shape(), g.dk).unwrap()),
            Some(Tensor::new(k.shape(), g.dv).unwrap()),
            Some(Tensor::new(w.shape(), g.dw).unwrap()),
            Some(Tensor::new(w.shape(), g.du).unwrap()),
        ]
    }
}

impl<T: Real> Graph<T> {
    /// Differentiable [`wkv_scan`].
    pub fn wkv(&mut self, k: Var, v: Var, w: Var, u: Var, layout: SeqLayout) -> Result<Var> {
        let (kv, vv, wv, uv) = (self.value(k), self.value(v), self.value(w), self.value(u));
        let d = check_inputs(kv, vv, wv, uv, layout)?;
        let delta = decay(wv.data(), layout.len);
        let (out, saved) = forward_impl(kv.data(), vv.data(), &delta, uv.data(), layout, d, true)?;
        let out = Tensor::new(kv.shape(), out)?;
        Ok(self.push(
            out,
            WkvOp {
                k,
                v,
                w,
                u,
                layout,
                saved: saved.expect("saved"),
            },
        ))
    }
}

/// Inverse of softplus, for initializing decays to a target `w'`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
