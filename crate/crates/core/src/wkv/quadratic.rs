//! Softmax self-attention with quadratic cost in sequence length. It backs
//! the spatial-temporal baseline in ablations and the complexity benchmarks.

use crate::error::{shape_err, Result};
use crate::numerics::graph::{BackCtx, Backward, Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::wkv::layout::SeqLayout;

fn gather_seq<T: Real>(x: &[T], base: usize, stride: usize, len: usize, d: usize, out: &mut [T]) {
    for t in 0..len {
        out[t * d..(t + 1) * d].copy_from_slice(&x[base + t * stride..][..d]);
    }
}

fn scatter_seq<T: Real>(src: &[T], base: usize, stride: usize, len: usize, d: usize, x: &mut [T]) {
    for t in 0..len {
        x[base + t * stride..][..d].copy_from_slice(&src[t * d..(t + 1) * d]);
    }
}

fn softmax_rows<T: Real>(s: &mut [T], n: usize) {
    for row in s.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

struct Attention<T> {
    q: Var,
    k: Var,
    v: Var,
    layout: SeqLayout,
    /// Row-stochastic attention matrices, one `len x len` block per sequence.
    probs: Vec<T>,
}

fn forward<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, layout: SeqLayout) -> Result<(Tensor<T>, Vec<T>)> {
    let d = q.last_dim();
    if q.shape() != k.shape() || q.shape() != v.shape() || q.rows() != layout.tokens() {
        return shape_err(format!(
            "attention: q {:?} k {:?} v {:?} layout {layout:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    let len = layout.len;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); layout.sequences() * len * len];
    let (mut qs, mut ks, mut vs) = (
        vec![T::zero(); len * d],
        vec![T::zero(); len * d],
        vec![T::zero(); len * d],
    );
    let mut ys = vec![T::zero(); len * d];
    for s in 0..layout.sequences() {
        let (base, stride) = layout.seq(s, d);
        gather_seq(q.data(), base, stride, len, d, &mut qs);
        gather_seq(k.data(), base, stride, len, d, &mut ks);
        gather_seq(v.data(), base, stride, len, d, &mut vs);
        let p = &mut probs[s * len * len..(s + 1) * len * len];
        // S = Q K^T / sqrt(d)
        T::gemm(
            len,
            d,
            len,
            scale,
            &qs,
            d as isize,
            1,
            &ks,
            1,
            d as isize,
            T::zero(),
            p,
            len as isize,
            1,
        );
        softmax_rows(p, len);
        T::gemm(
            len,
            len,
            d,
            T::one(),
            p,
            len as isize,
            1,
            &vs,
            d as isize,
            1,
            T::zero(),
            &mut ys,
            d as isize,
            1,
        );
        scatter_seq(&ys, base, stride, len, d, &mut out);
    }
    Ok((Tensor::new(q.shape(), out)?, probs))
}

/// Softmax attention within every sequence of `layout`, single head,
/// `1/sqrt(D)` scaling.
pub fn softmax_attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, layout: SeqLayout) -> Result<Tensor<T>> {
    forward(q, k, v, layout).map(|(y, _)| y)
}

impl<T: Real> Backward<T> for Attention<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.q, self.k, self.v]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (q, k, v) = (ctx.value(self.q), ctx.value(self.k), ctx.value(self.v));
        let d = q.last_dim();
        let len = self.layout.len;
        let scale = T::one() / T::of(d as f64).sqrt();
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); q.len()];
        let mut dv = vec![T::zero(); q.len()];
        let z = || vec![T::zero(); len * d];
        let (mut qs, mut ks, mut vs, mut gs) = (z(), z(), z(), z());
        let (mut dqs, mut dks, mut dvs) = (z(), z(), z());
        let mut dp = vec![T::zero(); len * len];
        for s in 0..self.layout.sequences() {
            let (base, stride) = self.layout.seq(s, d);
            gather_seq(q.data(), base, stride, len, d, &mut qs);
            gather_seq(k.data(), base, stride, len, d, &mut ks);
            gather_seq(v.data(), base, stride, len, d, &mut vs);
            gather_seq(gout.data(), base, stride, len, d, &mut gs);
            let p = &self.probs[s * len * len..(s + 1) * len * len];
            // dV = P^T dY
            T::gemm(
                len,
                len,
                d,
                T::one(),
                p,
                1,
                len as isize,
                &gs,
                d as isize,
                1,
                T::zero(),
                &mut dvs,
                d as isize,
                1,
            );
            // dP = dY V^T
            T::gemm(
                len,
                d,
                len,
                T::one(),
                &gs,
                d as isize,
                1,
                &vs,
                1,
                d as isize,
                T::zero(),
                &mut dp,
                len as isize,
                1,
            );
            for (dr, pr) in dp.chunks_exact_mut(len).zip(p.chunks_exact(len)) {
                let dot: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for (x, &pp) in dr.iter_mut().zip(pr) {
                    *x = pp * (*x - dot) * scale;
                }
            }
            // dQ = dS K, dK = dS^T Q
            T::gemm(
                len,
                len,
                d,
                T::one(),
                &dp,
                len as isize,
                1,
                &ks,
                d as isize,
                1,
                T::zero(),
                &mut dqs,
                d as isize,
                1,
            );
            T::gemm(
                len,
                len,
                d,
                T::one(),
                &dp,
                1,
                len as isize,
                &qs,
                d as isize,
                1,
                T::zero(),
                &mut dks,
                d as isize,
                1,
            );
            scatter_seq(&dqs, base, stride, len, d, &mut dq);
            scatter_seq(&dks, base, stride, len, d, &mut dk);
            scatter_seq(&dvs, base, stride, len, d, &mut dv);
        }
        vec![
            Some(Tensor::new(q.shape(), dq).unwrap()),
            Some(Tensor::new(q.shape(), dk).unwrap()),
            Some(Tensor::new(q.shape(), dv).unwrap()),
        ]
    }
}

impl<T: Real> Graph<T> {
    pub fn softmax_attention(&mut self, q: Var, k: Var, v: Var, layout: SeqLayout) -> Result<Var> {
        let (out, probs) = forward(self.value(q), self.value(k), self.value(v), layout)?;
        Ok(self.push(out, Attention { q, k, v, layout, probs }))
    }
}

/// Row-at-a-time softmax attention over one `[t, d]` sequence. Memory is
/// `O(t)`; work is `Theta(t^2 d)`. Used only as the quadratic baseline in
/// benchmarks.
pub fn naive_attention<T: Real>(q: &[T], k: &[T], v: &[T], t: usize, d: usize) -> Vec<T> {
    assert!(q.len() == t * d && k.len() == t * d && v.len() == t * d);
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut out = vec![T::zero(); t * d];
    let mut scores = vec![T::zero(); t];
    for i in 0..t {
        let qi = &q[i * d..(i + 1) * d];
        let mut m = T::neg_infinity();
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            let mut acc = T::zero();
            for c in 0..d {
                acc += qi[c] * kj[c];
            }
            *s = acc * scale;
            m = m.max(*s);
        }
        let mut z = T::zero();
        for s in scores.iter_mut() {
            *s = (*s - m).exp();
            z += *s;
        }
        let oi = &mut out[i * d..(i + 1) * d];
        for (j, &s) in scores.iter().enumerate() {
            let w = s / z;
            let vj = &v[j * d..(j + 1) * d];
            for c in 0..d {
                oi[c] += w * vj[c];
            }
        }
    }
    out
}
