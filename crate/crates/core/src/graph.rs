//! Reverse-mode autograd over [`Tensor`] values.
//!
//! A [`Graph`] is built eagerly: every op computes its value on insertion and
//! records enough to replay the chain rule. Learnable tensors are not nodes;
//! convolutions reference their [`ParamId`]s and [`Graph::backward`] writes
//! their gradients straight into a [`Gradients`] buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::losses;
use crate::nn::Conv2d;
use crate::params::{Gradients, ParamStore};
use crate::tensor::{conv2d, conv2d_backward, PoolAxis, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: Var, layer: Conv2d },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Resize(Var),
    Pool { x: Var, axis: PoolAxis },
    Broadcast(Var),
    BceIou { pred: Var, target: Tensor },
    WeightedSum(Vec<(f64, Var)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Backward {
    pub params: Gradients,
    nodes: Vec<Option<Tensor>>,
}

impl Backward {
    /// Gradient reaching node `v`, if any flowed there.
    pub fn node(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf; gradients are not propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that collects a gradient, used for input-sensitivity checks.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant copy of `v`'s current value (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    pub fn conv(&mut self, x: Var, layer: &Conv2d) -> Var {
        let w = self.params.values(layer.weight());
        let b = self.params.values(layer.bias());
        let value = conv2d(self.value(x), w, Some(b), &layer.geometry);
        self.push(value, Op::Conv { x, layer: *layer }, true)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).sigmoid();
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Broadcasting sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add_broadcast(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul_broadcast(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 - v);
        let rg = self.rg(x);
        self.push(value, Op::OneMinus(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor::concat(&values)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_channels(start, len);
        let rg = self.rg(x);
        self.push(value, Op::Slice { x, start }, rg)
    }

    /// Bilinear resize to `(height, width)`.
    pub fn resize(&mut self, x: Var, height: usize, width: usize) -> Var {
        if self.value(x).height() == height && self.value(x).width() == width {
            return x;
        }
        let value = self.value(x).resize_bilinear(height, width);
        let rg = self.rg(x);
        self.push(value, Op::Resize(x), rg)
    }

    /// Bilinear ×2 enlargement.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [_, h, w] = self.shape(x);
        self.resize(x, 2 * h, 2 * w)
    }

    pub fn pool(&mut self, x: Var, axis: PoolAxis) -> Var {
        let value = self.value(x).pool(axis);
        let rg = self.rg(x);
        self.push(value, Op::Pool { x, axis }, rg)
    }

    pub fn broadcast_to(&mut self, x: Var, shape: Shape) -> Var {
        let value = self.value(x).broadcast_to(shape);
        let rg = self.rg(x);
        self.push(value, Op::Broadcast(x), rg)
    }

    /// Scalar BCE + soft-IoU loss of `pred` against a fixed binary `target`.
    pub fn bce_iou(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let loss = losses::loss_bce_iou_raw(self.value(pred), target)?;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceIou {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// `Σ wᵢ·xᵢ` over same-shaped terms, accumulated in the given order.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let shape = self.shape(terms[0].1);
        let mut value = Tensor::zeros(shape);
        for &(w, v) in terms {
            let t = self.value(v);
            t.expect_shape(&value, "weighted_sum")?;
            for (o, x) in value.data_mut().iter_mut().zip(t.data()) {
                *o += w * x;
            }
        }
        let rg = terms.iter().any(|(_, v)| self.rg(*v));
        Ok(self.push(value, Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Backward {
        let mut params = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => grads[idx] = Some(grad),
                Op::Conv { x, layer } => {
                    let w = self.params.values(layer.weight());
                    let need = self.rg(*x);
                    let (dx, dw, db) =
                        conv2d_backward(self.value(*x), w, &grad, &layer.geometry, need);
                    params.accumulate(layer.weight(), &dw);
                    params.accumulate(layer.bias(), &db);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let mut dx = grad;
                    for (d, &v) in dx.data_mut().iter_mut().zip(input.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = grad;
                    for (d, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, grad.reduce_to(self.shape(*a)));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, grad.reduce_to(self.shape(*b)));
                    }
                }
                Op::Mul(a, b) => {
                    let shape = grad.shape();
                    if self.rg(*a) {
                        let other = self.value(*b).broadcast_to(shape);
                        let da = grad
                            .zip_map(&other, |g, o| g * o)
                            .expect("broadcast shapes")
                            .reduce_to(self.shape(*a));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let other = self.value(*a).broadcast_to(shape);
                        let db = grad
                            .zip_map(&other, |g, o| g * o)
                            .expect("broadcast shapes")
                            .reduce_to(self.shape(*b));
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::OneMinus(x) => {
                    accumulate(&mut grads, *x, grad.map(|g| -g));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let c = self.shape(*p)[0];
                        if self.rg(*p) {
                            accumulate(&mut grads, *p, grad.slice_channels(start, c));
                        }
                        start += c;
                    }
                }
                Op::Slice { x, start } => {
                    let shape = self.shape(*x);
                    let mut dx = Tensor::zeros(shape);
                    let plane = shape[1] * shape[2];
                    dx.data_mut()[start * plane..start * plane + grad.len()]
                        .copy_from_slice(grad.data());
                    accumulate(&mut grads, *x, dx);
                }
                Op::Resize(x) => {
                    let dx = Tensor::resize_bilinear_backward(&grad, self.shape(*x));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Pool { x, axis } => {
                    let dx = Tensor::pool_backward(&grad, *axis, self.shape(*x));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Broadcast(x) => {
                    accumulate(&mut grads, *x, grad.reduce_to(self.shape(*x)));
                }
                Op::BceIou { pred, target } => {
                    let mut dx = losses::loss_bce_iou_grad(self.value(*pred), target);
                    let g = grad.item();
                    dx.data_mut().iter_mut().for_each(|d| *d *= g);
                    accumulate(&mut grads, *pred, dx);
                }
                Op::WeightedSum(terms) => {
                    for &(w, v) in terms {
                        if self.rg(v) {
                            accumulate(&mut grads, v, grad.map(|g| w * g));
                        }
                    }
                }
            }
        }
        Backward {
            params,
            nodes: grads,
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamGroup};
    use crate::tensor::ConvGeometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_of(g: &mut Graph<'_>, v: Var) -> Var {
        // Σ x² / 2 style reduction through ops with known adjoints.
        let sq = g.mul(v, v).unwrap();
        let pooled = g.pool(sq, PoolAxis::OverChannels);
        let pooled = g.pool(pooled, PoolAxis::OverSpatial);
        g.weighted_sum(&[(0.5, pooled)]).unwrap()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(
            &mut store,
            "c",
            ParamGroup::Decoder,
            ConvGeometry::same(2, 3, 3),
            Init::Relu,
            &mut rng,
        );
        let x0 = Tensor::from_fn([2, 4, 4], |c, y, x| ((c * 7 + y * 3 + x) % 5) as f64 * 0.1 - 0.2);
        let build = |x: Tensor| {
            let mut g = Graph::new(&store);
            let xv = g.variable(x);
            let up = g.upsample2(xv);
            let y = conv.forward(&mut g, up);
            let s = g.sigmoid(y);
            let gate = g.pool(s, PoolAxis::OverHeight);
            let z = g.mul(s, gate).unwrap();
            let z = g.one_minus(z);
            let out = scalar_of(&mut g, z);
            (g, xv, out)
        };
        let (g, xv, out) = build(x0.clone());
        let back = g.backward(out);
        let analytic = back.node(xv).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus.data_mut()[i] += h;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= h;
            let (gp, _, op) = build(plus);
            let (gm, _, om) = build(minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((a - numeric).abs() <= 1e-7 * (1.0 + a.abs()), "{i}: {a} vs {numeric}");
        }
    }
}
