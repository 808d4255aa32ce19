//! Reverse-mode tape.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the operation that produced it. Each operation owns its backward rule
//! through the [`Backward`] trait, so modules outside `numerics` (the WKV scan,
//! channel attention, the token shifts) register their own fused kernels.

use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct BackCtx<'a, T> {
    values: &'a [Tensor<T>],
    out: Var,
    need: &'a [bool],
}

impl<'a, T: Real> BackCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.values[v.0]
    }

    pub fn out(&self) -> &'a Tensor<T> {
        &self.values[self.out.0]
    }

    /// Whether the `i`-th input (in `Backward::inputs` order) wants a gradient.
    pub fn needs(&self, i: usize) -> bool {
        self.need[i]
    }
}

pub trait Backward<T: Real> {
    fn inputs(&self) -> Vec<Var>;

    /// Gradients for each input in `inputs()` order. Entries the context
    /// marks as unneeded may be `None`.
    fn backward(&self, ctx: &BackCtx<'_, T>, gout: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

pub struct Graph<T: Real> {
    values: Vec<Tensor<T>>,
    ops: Vec<Option<Box<dyn Backward<T>>>>,
    tracked: Vec<bool>,
    record: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            tracked: Vec::new(),
            record: true,
        }
    }

    /// A graph that never records backward rules; used for inference.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.values.push(t);
        self.ops.push(None);
        self.tracked.push(false);
        Var(self.values.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        let v = self.constant(t);
        self.tracked[v.0] = self.record;
        v
    }

    pub fn push(&mut self, value: Tensor<T>, op: impl Backward<T> + 'static) -> Var {
        let tracked = self.record && op.inputs().iter().any(|v| self.tracked[v.0]);
        self.values.push(value);
        self.ops.push(if tracked { Some(Box::new(op)) } else { None });
        self.tracked.push(tracked);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Gradients of the scalar `loss` with respect to every tracked value.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.values[loss.0].len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(op) = &self.ops[i] else { continue };
            let Some(gout) = grads[i].take() else { continue };
            let inputs = op.inputs();
            let need: Vec<bool> = inputs.iter().map(|v| self.tracked[v.0]).collect();
            let ctx = BackCtx {
                values: &self.values,
                out: Var(i),
                need: &need,
            };
            let gins = op.backward(&ctx, &gout);
            debug_assert_eq!(gins.len(), inputs.len());
            for ((v, g), needed) in inputs.into_iter().zip(gins).zip(need) {
                let Some(g) = g else { continue };
                if !needed {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.values[v.0].shape());
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
