//! Basic differentiable operations on [`Graph`].
//!
//! Shapes are checked with assertions here: these are internal building
//! blocks and callers validate user-facing shapes before reaching them.

use std::rc::Rc;

use crate::numerics::graph::{BackCtx, Backward, Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

fn out_shape_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 1") = last;
    s
}

fn col_sums<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in x.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

struct Linear {
    x: Var,
    w: Var,
    b: Option<Var>,
}

impl<T: Real> Backward<T> for Linear {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let w = ctx.value(self.w);
        let (k, m) = (w.shape()[0], w.shape()[1]);
        let r = x.rows();
        let dy = gout.data();
        let dx = ctx.needs(0).then(|| {
            let mut d = vec![T::zero(); r * k];
            T::gemm(
                r,
                m,
                k,
                T::one(),
                dy,
                m as isize,
                1,
                w.data(),
                1,
                m as isize,
                T::zero(),
                &mut d,
                k as isize,
                1,
            );
            Tensor::new(x.shape(), d).unwrap()
        });
        let dw = ctx.needs(1).then(|| {
            let mut d = vec![T::zero(); k * m];
            T::gemm(
                k,
                r,
                m,
                T::one(),
                x.data(),
                1,
                k as isize,
                dy,
                m as isize,
                1,
                T::zero(),
                &mut d,
                m as isize,
                1,
            );
            Tensor::new(&[k, m], d).unwrap()
        });
        let mut out = vec![dx, dw];
        if self.b.is_some() {
            out.push(ctx.needs(2).then(|| Tensor::new(&[m], col_sums(dy, m)).unwrap()));
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp {
    kind: Binary,
    a: Var,
    b: Var,
}

impl<T: Real> Backward<T> for BinaryOp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        match self.kind {
            Binary::Add => vec![Some(gout.clone()), Some(gout.clone())],
            Binary::Sub => vec![Some(gout.clone()), Some(gout.map(|g| -g))],
            Binary::Mul => {
                let a = ctx.value(self.a);
                let b = ctx.value(self.b);
                vec![
                    ctx.needs(0).then(|| gout.zip_map(b, |g, y| g * y)),
                    ctx.needs(1).then(|| gout.zip_map(a, |g, x| g * x)),
                ]
            }
        }
    }
}

struct Scale {
    x: Var,
    c: f64,
}

impl<T: Real> Backward<T> for Scale {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = T::of(self.c);
        vec![Some(gout.map(|g| g * c))]
    }
}

/// `x * g` with `g` broadcast over rows (per-channel scaling).
struct MulChannel {
    x: Var,
    g: Var,
}

impl<T: Real> Backward<T> for MulChannel {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.g]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let g = ctx.value(self.g);
        let d = g.len();
        let dx = ctx.needs(0).then(|| {
            let mut out = gout.clone();
            for row in out.data_mut().chunks_exact_mut(d) {
                for (o, &s) in row.iter_mut().zip(g.data()) {
                    *o *= s;
                }
            }
            out
        });
        let dg = ctx.needs(1).then(|| {
            let mut acc = vec![T::zero(); d];
            for (xr, gr) in x.data().chunks_exact(d).zip(gout.data().chunks_exact(d)) {
                for ((a, &xv), &gv) in acc.iter_mut().zip(xr).zip(gr) {
                    *a += xv * gv;
                }
            }
            Tensor::new(&[d], acc).unwrap()
        });
        vec![dx, dg]
    }
}

/// Per-group affine modulation `x * (1 + scale[g]) + shift[g]` where the rows
/// of `x` are split into `G` equal contiguous groups.
struct Modulate {
    x: Var,
    scale: Var,
    shift: Var,
}

impl<T: Real> Backward<T> for Modulate {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.scale, self.shift]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let s = ctx.value(self.scale);
        let (groups, d) = (s.shape()[0], s.shape()[1]);
        let per = x.len() / groups;
        let mut dx = vec![T::zero(); x.len()];
        let mut ds = vec![T::zero(); groups * d];
        let mut db = vec![T::zero(); groups * d];
        for gi in 0..groups {
            let srow = &s.data()[gi * d..(gi + 1) * d];
            let (dsr, dbr) = (&mut ds[gi * d..(gi + 1) * d], &mut db[gi * d..(gi + 1) * d]);
            let span = gi * per..(gi + 1) * per;
            for ((xr, gr), dxr) in x.data()[span.clone()]
                .chunks_exact(d)
                .zip(gout.data()[span.clone()].chunks_exact(d))
                .zip(dx[span].chunks_exact_mut(d))
            {
                for c in 0..d {
                    dxr[c] = gr[c] * (T::one() + srow[c]);
                    dsr[c] += gr[c] * xr[c];
                    dbr[c] += gr[c];
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).unwrap()),
            Some(Tensor::new(s.shape(), ds).unwrap()),
            Some(Tensor::new(s.shape(), db).unwrap()),
        ]
    }
}

/// Per-group gate `x * a[g]`.
struct Gate {
    x: Var,
    a: Var,
}

impl<T: Real> Backward<T> for Gate {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.a]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let a = ctx.value(self.a);
        let (groups, d) = (a.shape()[0], a.shape()[1]);
        let per = x.len() / groups;
        let mut dx = vec![T::zero(); x.len()];
        let mut da = vec![T::zero(); groups * d];
        for gi in 0..groups {
            let arow = &a.data()[gi * d..(gi + 1) * d];
            let dar = &mut da[gi * d..(gi + 1) * d];
            let span = gi * per..(gi + 1) * per;
            for ((xr, gr), dxr) in x.data()[span.clone()]
                .chunks_exact(d)
                .zip(gout.data()[span.clone()].chunks_exact(d))
                .zip(dx[span].chunks_exact_mut(d))
            {
                for c in 0..d {
                    dxr[c] = gr[c] * arow[c];
                    dar[c] += gr[c] * xr[c];
                }
            }
        }
        vec![
            Some(Tensor::new(x.shape(), dx).unwrap()),
            Some(Tensor::new(a.shape(), da).unwrap()),
        ]
    }
}

struct LayerNorm {
    x: Var,
    weight: Option<Var>,
    bias: Option<Var>,
    eps: f64,
}

fn ln_stats<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

impl<T: Real> Backward<T> for LayerNorm {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x];
        v.extend(self.weight);
        v.extend(self.bias);
        v
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let d = x.last_dim();
        let w = self.weight.map(|w| ctx.value(w).data());
        let n = T::of(d as f64);
        let eps = T::of(self.eps);
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); d];
        let mut db = vec![T::zero(); d];
        let mut xhat = vec![T::zero(); d];
        let mut dxhat = vec![T::zero(); d];
        for ((xr, gr), dxr) in x
            .data()
            .chunks_exact(d)
            .zip(gout.data().chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
        {
            let (mean, rstd) = ln_stats(xr, eps);
            let (mut m1, mut m2) = (T::zero(), T::zero());
            for c in 0..d {
                xhat[c] = (xr[c] - mean) * rstd;
                dxhat[c] = match w {
                    Some(w) => gr[c] * w[c],
                    None => gr[c],
                };
                m1 += dxhat[c];
                m2 += dxhat[c] * xhat[c];
                dw[c] += gr[c] * xhat[c];
                db[c] += gr[c];
            }
            m1 /= n;
            m2 /= n;
            for c in 0..d {
                dxr[c] = rstd * (dxhat[c] - m1 - xhat[c] * m2);
            }
        }
        let mut out = vec![Some(Tensor::new(x.shape(), dx).unwrap())];
        if self.weight.is_some() {
            out.push(Some(Tensor::new(&[d], dw).unwrap()));
        }
        if self.bias.is_some() {
            out.push(Some(Tensor::new(&[d], db).unwrap()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Activation {
    /// tanh approximation
    Gelu,
    Silu,
    Sigmoid,
    Softplus,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Overflow-free for either sign; written without a data-dependent branch
/// because activations are evenly split in sign.
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    let e = (-x.abs()).exp();
    let r = T::one() / (T::one() + e);
    let neg = r * e;
    if x >= T::zero() {
        r
    } else {
        neg
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > T::of(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            // 0.5 (1 + tanh z) = sigmoid(2z), which needs one exp instead of tanh
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let inner = c * (x + T::of(0.044715) * x * x * x);
                x * sigmoid(inner + inner)
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Value and derivative sharing one exponential.
    pub fn eval<T: Real>(self, x: T) -> (T, T) {
        match self {
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let k = T::of(0.044715);
                let inner = c * (x + k * x * x * x);
                let s = sigmoid(inner + inner);
                let dinner = c * (T::one() + T::of(3.0) * k * x * x);
                (x * s, s + T::of(2.0) * x * s * (T::one() - s) * dinner)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                (x * s, s * (T::one() + x * (T::one() - s)))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (T::one() - s))
            }
            Activation::Softplus => (softplus(x), sigmoid(x)),
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let k = T::of(0.044715);
                let inner = c * (x + k * x * x * x);
                let s = sigmoid(inner + inner);
                let dinner = c * (T::one() + T::of(3.0) * k * x * x);
                s + T::of(2.0) * x * s * (T::one() - s) * dinner
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Elementwise activation; the local derivative is saved during the
/// forward pass.
struct Unary<T> {
    x: Var,
    deriv: Tensor<T>,
}

impl<T: Real> Backward<T> for Unary<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(gout.zip_map(&self.deriv, |g, d| g * d))]
    }
}

struct SliceCols {
    x: Var,
    start: usize,
}

impl<T: Real> Backward<T> for SliceCols {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.x);
        let m = x.last_dim();
        let len = gout.last_dim();
        let mut dx = Tensor::zeros(x.shape());
        for (dr, gr) in dx.data_mut().chunks_exact_mut(m).zip(gout.data().chunks_exact(len)) {
            dr[self.start..self.start + len].copy_from_slice(gr);
        }
        vec![Some(dx)]
    }
}

struct Gather {
    x: Var,
    index: Rc<Vec<usize>>,
}

impl<T: Real> Backward<T> for Gather {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut dx = Tensor::zeros(ctx.value(self.x).shape());
        let d = dx.data_mut();
        for (&i, &g) in self.index.iter().zip(gout.data()) {
            d[i] += g;
        }
        vec![Some(dx)]
    }
}

struct Reshape {
    x: Var,
}

impl<T: Real> Backward<T> for Reshape {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let shape = ctx.value(self.x).shape();
        vec![Some(gout.clone().reshape(shape).unwrap())]
    }
}

struct WeightedSum {
    x: Var,
    w: Tensor<f64>,
}

impl<T: Real> Backward<T> for WeightedSum {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = gout.data()[0];
        vec![Some(self.w.cast::<T>().map(|v| v * g))]
    }
}

struct Mse {
    a: Var,
    b: Var,
}

impl<T: Real> Backward<T> for Mse {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let a = ctx.value(self.a);
        let b = ctx.value(self.b);
        let k = T::of(2.0) * gout.data()[0] / T::of(a.len() as f64);
        let da = a.zip_map(b, |x, y| k * (x - y));
        let db = ctx.needs(1).then(|| da.map(|v| -v));
        vec![Some(da), db]
    }
}

impl<T: Real> Graph<T> {
    /// `x W + b` over the last axis; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (k, m) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.last_dim(), k, "linear: input width mismatch");
        let r = xv.rows();
        let mut y = vec![T::zero(); r * m];
        T::gemm(
            r,
            k,
            m,
            T::one(),
            xv.data(),
            k as isize,
            1,
            wv.data(),
            m as isize,
            1,
            T::zero(),
            &mut y,
            m as isize,
            1,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), m);
            for row in y.chunks_exact_mut(m) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let shape = out_shape_last(xv.shape(), m);
        self.push(Tensor::new(&shape, y).unwrap(), Linear { x, w, b })
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let out = match kind {
            Binary::Add => av.zip_map(bv, |x, y| x + y),
            Binary::Sub => av.zip_map(bv, |x, y| x - y),
            Binary::Mul => av.zip_map(bv, |x, y| x * y),
        };
        self.push(out, BinaryOp { kind, a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::of(c);
        let out = self.value(x).map(|v| v * k);
        self.push(out, Scale { x, c })
    }

    pub fn mul_channel(&mut self, x: Var, g: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(g);
        let d = xv.last_dim();
        assert_eq!(gv.len(), d, "per-channel vector length mismatch");
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (o, &s) in row.iter_mut().zip(gv.data()) {
                *o *= s;
            }
        }
        self.push(out, MulChannel { x, g })
    }

    /// `x * (1 + scale) + shift`, with `scale`/`shift` of shape `[G, D]`.
    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(scale);
        let bv = self.value(shift);
        let (groups, d) = (sv.shape()[0], sv.shape()[1]);
        assert_eq!(sv.shape(), bv.shape());
        assert_eq!(xv.last_dim(), d);
        assert_eq!(xv.len() % (groups * d), 0);
        let per = xv.len() / groups;
        let mut out = xv.clone();
        for (gi, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
            let s = &sv.data()[gi * d..(gi + 1) * d];
            let b = &bv.data()[gi * d..(gi + 1) * d];
            for row in chunk.chunks_exact_mut(d) {
                for c in 0..d {
                    row[c] = row[c] * (T::one() + s[c]) + b[c];
                }
            }
        }
        self.push(out, Modulate { x, scale, shift })
    }

    /// `x * a` with `a` of shape `[G, D]`.
    pub fn gate(&mut self, x: Var, a: Var) -> Var {
        let xv = self.value(x);
        let av = self.value(a);
        let (groups, d) = (av.shape()[0], av.shape()[1]);
        assert_eq!(xv.last_dim(), d);
        assert_eq!(xv.len() % (groups * d), 0);
        let per = xv.len() / groups;
        let mut out = xv.clone();
        for (gi, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
            let s = &av.data()[gi * d..(gi + 1) * d];
            for row in chunk.chunks_exact_mut(d) {
                for c in 0..d {
                    row[c] *= s[c];
                }
            }
        }
        self.push(out, Gate { x, a })
    }

    pub fn layer_norm(&mut self, x: Var, weight: Option<Var>, bias: Option<Var>, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let w = weight.map(|w| self.value(w).data());
        let b = bias.map(|b| self.value(b).data());
        let e = T::of(eps);
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            let (mean, rstd) = ln_stats(row, e);
            for c in 0..d {
                let mut v = (row[c] - mean) * rstd;
                if let Some(w) = w {
                    v *= w[c];
                }
                if let Some(b) = b {
                    v += b[c];
                }
                row[c] = v;
            }
        }
        self.push(out, LayerNorm { x, weight, bias, eps })
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let xv = self.value(x);
        if !self.is_tracked(x) {
            let out = xv.map(|v| act.apply(v));
            return self.push(
                out,
                Unary {
                    x,
                    deriv: Tensor::zeros(&[0]),
                },
            );
        }
        let mut out = Vec::with_capacity(xv.len());
        let mut deriv = Vec::with_capacity(xv.len());
        for &v in xv.data() {
            let (y, dy) = act.eval(v);
            out.push(y);
            deriv.push(dy);
        }
        let shape = xv.shape().to_vec();
        let out = Tensor::new(&shape, out).unwrap();
        let deriv = Tensor::new(&shape, deriv).unwrap();
        self.push(out, Unary { x, deriv })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let m = xv.last_dim();
        assert!(start + len <= m);
        let mut data = Vec::with_capacity(xv.rows() * len);
        for row in xv.data().chunks_exact(m) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let shape = out_shape_last(xv.shape(), len);
        self.push(Tensor::new(&shape, data).unwrap(), SliceCols { x, start })
    }

    /// `y[i] = x[index[i]]`, any permutation or selection of elements.
    pub fn gather(&mut self, x: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> Var {
        let xv = self.value(x).data();
        let data: Vec<T> = index.iter().map(|&i| xv[i]).collect();
        let out = Tensor::new(shape, data).expect("gather shape");
        self.push(out, Gather { x, index })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape).expect("reshape");
        self.push(out, Reshape { x })
    }

    /// Scalar `sum(x * w)` with a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), w.len());
        let s: T = xv.data().iter().zip(w.data()).map(|(&a, &b)| a * T::of(b)).sum();
        self.push(Tensor::scalar(s), WeightedSum { x, w: w.clone() })
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        let n = T::of(av.len() as f64);
        let s: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(s / n), Mse { a, b })
    }
}
