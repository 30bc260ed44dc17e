//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order, so [`Graph::backward`] is one reverse sweep.
//! Parameters are borrowed, not copied: build a graph per step, take the
//! [`Gradients`], drop the graph, then update the parameters.

use std::borrow::Cow;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: usize, w: usize, b: Option<usize> },
    TopK { x: usize, kept: Vec<usize>, k: usize },
    TopKLinear { pre: usize, k: usize, kept: Vec<usize>, w: usize, b: Option<usize> },
    Conv2d { x: usize, k: usize, b: Option<usize>, p: ConvParams, cols: Vec<T> },
    ConvTranspose2d { x: usize, k: usize, b: Option<usize>, p: ConvParams },
    Relu { x: usize },
    Mse { a: usize, b: usize },
    WeightedSum { x: usize, weights: Vec<T> },
    Add { a: usize, b: usize },
    Scale { x: usize, factor: T },
    Reshape { x: usize },
}

#[derive(Debug)]
struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation in one precision.
#[derive(Debug, Default)]
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    backward_done: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.dims()))
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a = *a + v;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        Ok(self.push(Cow::Owned(y), Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }, rg))
    }

    pub fn topk(&mut self, x: Var, k: usize) -> Result<Var> {
        let (y, kept) = kernels::topk_with_indices(self.value(x), k)?;
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(y), Op::TopK { x: x.0, kept, k }, rg))
    }

    /// Fused `linear(topk(pre, k), w, b)`; gradients touch only the kept columns.
    pub fn topk_linear(&mut self, pre: Var, k: usize, w: Var, b: Option<Var>) -> Result<Var> {
        let (y, kept) = kernels::topk_linear_forward(self.value(pre), k, self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(pre.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        Ok(self.push(Cow::Owned(y), Op::TopKLinear { pre: pre.0, k, kept, w: w.0, b: b.map(|b| b.0) }, rg))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let (y, cols) = kernels::conv2d_with_cols(self.value(x), self.value(kernel), b.map(|b| self.value(b)), p)?;
        let rg = self.rg(x.0) || self.rg(kernel.0) || b.is_some_and(|b| self.rg(b.0));
        Ok(self.push(Cow::Owned(y), Op::Conv2d { x: x.0, k: kernel.0, b: b.map(|b| b.0), p, cols }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let y = kernels::conv_transpose2d(self.value(x), self.value(kernel), b.map(|b| self.value(b)), p)?;
        let rg = self.rg(x.0) || self.rg(kernel.0) || b.is_some_and(|b| self.rg(b.0));
        Ok(self.push(Cow::Owned(y), Op::ConvTranspose2d { x: x.0, k: kernel.0, b: b.map(|b| b.0), p }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu(self.value(x));
        let rg = self.rg(x.0);
        self.push(Cow::Owned(y), Op::Relu { x: x.0 }, rg)
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::mse(self.value(a), self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Cow::Owned(Tensor::scalar(v)), Op::Mse { a: a.0, b: b.0 }, rg))
    }

    /// `Σ x·weights`, a scalar; handy for probing gradients of non-scalar ops.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        if !self.value(x).same_dims(weights) {
            return shape_err(format!("weighted_sum: {:?} vs {:?}", self.value(x).dims(), weights.dims()));
        }
        let v = self.value(x).dot(weights);
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(Tensor::scalar(v)), Op::WeightedSum { x: x.0, weights: weights.data().to_vec() }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_dims(tb) {
            return shape_err(format!("add: {:?} vs {:?}", ta.dims(), tb.dims()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&u, &v)| u + v).collect();
        let y = Tensor::new(ta.dims().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Cow::Owned(y), Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let rg = self.rg(x.0);
        self.push(Cow::Owned(y), Op::Scale { x: x.0, factor }, rg)
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(dims)?;
        let rg = self.rg(x.0);
        Ok(self.push(Cow::Owned(y), Op::Reshape { x: x.0 }, rg))
    }

    /// Allows another [`Graph::backward`] on the same recording.
    pub fn reset_gradients(&mut self) {
        self.backward_done = false;
    }

    /// Propagates `d loss / d node` to every node that depends on a parameter.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.dims().to_vec()));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if !self.rg(loss.0) {
            return Err(Error::DetachedGraph);
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut pending: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut out: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pending);
            out[i] = Some(Tensor::new(node.value.dims().to_vec(), g)?);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[T], pending: &mut [Option<Vec<T>>]) {
        let val = |j: usize| -> &Tensor<T> { &self.nodes[j].value };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let grads = kernels::linear_backward(val(*x), val(*w), g, self.rg(*x), self.rg(*w));
                if let Some(dx) = grads.dx {
                    accumulate(&mut pending[*x], dx);
                }
                if let Some(dw) = grads.dw {
                    accumulate(&mut pending[*w], dw);
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    accumulate(&mut pending[b], grads.db);
                }
            }
            Op::TopK { x, kept, k } => {
                if self.rg(*x) {
                    let n = val(*x).dims()[1];
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, idx) in kept.chunks(*k).enumerate() {
                        for &c in idx {
                            dx[r * n + c] = g[r * n + c];
                        }
                    }
                    accumulate(&mut pending[*x], dx);
                }
            }
            Op::TopKLinear { pre, k, kept, w, b } => {
                let grads = kernels::topk_linear_backward(val(*pre), kept, *k, val(*w), g, self.rg(*pre), self.rg(*w));
                if let Some(dpre) = grads.dx {
                    accumulate(&mut pending[*pre], dpre);
                }
                if let Some(dw) = grads.dw {
                    accumulate(&mut pending[*w], dw);
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    accumulate(&mut pending[b], grads.db);
                }
            }
            Op::Conv2d { x, k, b, p, cols } => {
                let grads = kernels::conv2d_backward(val(*x), val(*k), cols, *p, g, self.rg(*x), self.rg(*k));
                if let Some(dx) = grads.dx {
                    accumulate(&mut pending[*x], dx);
                }
                if let Some(dk) = grads.dk {
                    accumulate(&mut pending[*k], dk);
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    accumulate(&mut pending[b], grads.db);
                }
            }
            Op::ConvTranspose2d { x, k, b, p } => {
                let grads = kernels::conv_transpose2d_backward(val(*x), val(*k), *p, g, self.rg(*x), self.rg(*k));
                if let Some(dx) = grads.dx {
                    accumulate(&mut pending[*x], dx);
                }
                if let Some(dk) = grads.dk {
                    accumulate(&mut pending[*k], dk);
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    accumulate(&mut pending[b], grads.db);
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let y = self.nodes[i].value.data();
                    let dx = g.iter().zip(y).map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() }).collect();
                    accumulate(&mut pending[*x], dx);
                }
            }
            Op::Mse { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let scale = T::from_f64(2.0) * g[0] / T::from_f64(ta.len() as f64);
                let diff: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&u, &v)| scale * (u - v)).collect();
                if self.rg(*b) {
                    accumulate(&mut pending[*b], diff.iter().map(|&d| -d).collect());
                }
                if self.rg(*a) {
                    accumulate(&mut pending[*a], diff);
                }
            }
            Op::WeightedSum { x, weights } => {
                if self.rg(*x) {
                    accumulate(&mut pending[*x], weights.iter().map(|&w| w * g[0]).collect());
                }
            }
            Op::Add { a, b } => {
                for j in [*a, *b] {
                    if self.rg(j) {
                        accumulate(&mut pending[j], g.to_vec());
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.rg(*x) {
                    accumulate(&mut pending[*x], g.iter().map(|&v| v * *factor).collect());
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    accumulate(&mut pending[*x], g.to_vec());
                }
            }
        }
    }
}
