//! Tape-based reverse-mode differentiation.
//!
//! Every operation executed through a [`Tape`] appends a node holding its
//! output value and whatever the backward rule needs. [`Tape::backward`]
//! walks the nodes in exact reverse order of execution, accumulating
//! `∂loss/∂node` and finally reporting a gradient for every registered
//! parameter.

use std::collections::BTreeMap;

use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::attention::{attention_core, attention_core_backward};
use crate::ops::conv::{conv3d, conv3d_backward, Conv3dGeometry};
use crate::ops::linear::{linear, linear_backward};
use crate::ops::loss::{bce_with_logits, bce_with_logits_grad};
use crate::ops::norm::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, layer_norm, layer_norm_backward,
    NormCache, RunningStats,
};
use crate::ops::pool::{maxpool3d_backward, maxpool3d_with_argmax, spatial_mean, PoolGeometry};
use crate::ops::softmax::{softmax, softmax_backward};
use crate::ops::Activation;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a train-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv3d { x: usize, w: usize, b: Option<usize>, geom: Conv3dGeometry },
    MaxPool { x: usize, argmax: Vec<usize> },
    SpatialMean { x: usize },
    BatchNorm { x: usize, g: usize, b: usize, cache: NormCache<T>, train: bool },
    LayerNorm { x: usize, g: usize, b: usize, cache: NormCache<T> },
    Act { x: usize, kind: Activation },
    Linear { x: usize, w: usize, b: Option<usize> },
    Softmax { x: usize },
    Attention { q: usize, k: usize, v: usize, heads: usize, head_dim: usize, probs: Vec<T> },
    Add { a: usize, b: usize },
    AddBroadcast { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: T },
    Sum { x: usize },
    Mean { x: usize },
    Reshape { x: usize },
    SwapLastTwo { x: usize },
    PrependToken { x: usize, token: usize },
    SelectToken { x: usize, index: usize },
    MeanTokens { x: usize },
    BceLogits { logits: usize, labels: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, usize)>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    params: BTreeMap<String, Tensor<T>>,
    vars: Vec<Option<Tensor<T>>>,
    order: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }

    /// Gradient with respect to an intermediate value, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.vars.get(var.0).and_then(|g| g.as_ref())
    }

    /// Node indices in the order the backward pass visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.order
    }
}

fn transpose_last_two<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let shape = t.shape();
    let k = shape.len();
    let (a, b) = (shape[k - 2], shape[k - 1]);
    let mut out = vec![T::zero(); t.len()];
    for (blk, src) in t.data().chunks(a * b).enumerate() {
        let dst = &mut out[blk * a * b..(blk + 1) * a * b];
        for i in 0..a {
            for j in 0..b {
                dst[j * a + i] = src[i * b + j];
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.swap(k - 2, k - 1);
    Tensor::from_parts(new_shape, out)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable tensor under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        let idx = self.nodes.len() - 1;
        self.params.push((name.into(), idx));
        Var(idx)
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv3dGeometry) -> Result<Var> {
        let y = conv3d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(y, Op::Conv3d { x: x.0, w: w.0, b: b.map(|b| b.0), geom }, &inputs))
    }

    pub fn maxpool3d(&mut self, x: Var, geom: PoolGeometry) -> Result<Var> {
        let (y, argmax) = maxpool3d_with_argmax(self.value(x), geom)?;
        Ok(self.push(y, Op::MaxPool { x: x.0, argmax }, &[x.0]))
    }

    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let y = spatial_mean(self.value(x))?;
        Ok(self.push(y, Op::SpatialMean { x: x.0 }, &[x.0]))
    }

    /// Per-channel batch normalization over `N×C×…`. With `running` set,
    /// the stored statistics are used (eval mode); otherwise batch
    /// statistics are used and returned.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        eps: T,
        running: Option<&RunningStats<T>>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (xv, g, s) = (self.value(x), self.value(gain), self.value(shift));
        let (y, cache, stats) = match running {
            Some(rs) => {
                let (y, c) = batch_norm_eval(xv, g, s, rs, eps)?;
                (y, c, None)
            }
            None => {
                let (y, c) = batch_norm_train(xv, g, s, eps)?;
                let count = xv.len() / g.len();
                let stats = BatchStats {
                    mean: c.mean.clone(),
                    var: c.var.clone(),
                    count,
                };
                (y, c, Some(stats))
            }
        };
        let train = running.is_none();
        let v = self.push(
            y,
            Op::BatchNorm { x: x.0, g: gain.0, b: shift.0, cache, train },
            &[x.0, gain.0, shift.0],
        );
        Ok((v, stats))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: T) -> Result<Var> {
        let (y, cache) = layer_norm(self.value(x), self.value(gain), self.value(shift), eps)?;
        Ok(self.push(
            y,
            Op::LayerNorm { x: x.0, g: gain.0, b: shift.0, cache },
            &[x.0, gain.0, shift.0],
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = self.value(x).map(|v| kind.eval(v));
        self.push(y, Op::Act { x: x.0, kind }, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(y, Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }, &inputs))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        let y = softmax(self.value(x), axis)?;
        Ok(self.push(y, Op::Softmax { x: x.0 }, &[x.0]))
    }

    /// Scaled dot-product attention of already-projected, head-packed
    /// queries, keys and values.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, head_dim: usize) -> Result<Var> {
        let (y, probs) = attention_core(self.value(q), self.value(k), self.value(v), heads, head_dim)?;
        Ok(self.push(
            y,
            Op::Attention { q: q.0, k: k.0, v: v.0, heads, head_dim, probs },
            &[q.0, k.0, v.0],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(y, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err(format!("cannot broadcast {sb:?} onto {sa:?}"));
        }
        let bd = self.value(b).data();
        let n = bd.len();
        let mut y = self.value(a).clone();
        for chunk in y.data_mut().chunks_mut(n) {
            for (v, &w) in chunk.iter_mut().zip(bd) {
                *v = *v + w;
            }
        }
        Ok(self.push(y, Op::AddBroadcast { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x: x.0, factor }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.push(y, Op::Mean { x: x.0 }, &[x.0])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x: x.0 }, &[x.0]))
    }

    /// Swaps the two trailing axes.
    pub fn swap_last_two(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() < 2 {
            return shape_err(format!("cannot transpose {:?}", self.shape(x)));
        }
        let y = transpose_last_two(self.value(x));
        Ok(self.push(y, Op::SwapLastTwo { x: x.0 }, &[x.0]))
    }

    /// `B×S×D` plus a `D` token → `B×(S+1)×D` with the token first.
    pub fn prepend_token(&mut self, x: Var, token: Var) -> Result<Var> {
        let &[b, s, d] = self.shape(x) else {
            return shape_err(format!("expected B×S×D tokens, got {:?}", self.shape(x)));
        };
        if self.shape(token) != [d] {
            return shape_err(format!(
                "token {:?} does not match model width {d}",
                self.shape(token)
            ));
        }
        let (xd, td) = (self.value(x).data(), self.value(token).data());
        let mut out = Vec::with_capacity(b * (s + 1) * d);
        for bi in 0..b {
            out.extend_from_slice(td);
            out.extend_from_slice(&xd[bi * s * d..(bi + 1) * s * d]);
        }
        let y = Tensor::from_parts(vec![b, s + 1, d], out);
        Ok(self.push(y, Op::PrependToken { x: x.0, token: token.0 }, &[x.0, token.0]))
    }

    /// `B×S×D` → `B×D`, keeping row `index` of every sequence.
    pub fn select_token(&mut self, x: Var, index: usize) -> Result<Var> {
        let &[b, s, d] = self.shape(x) else {
            return shape_err(format!("expected B×S×D tokens, got {:?}", self.shape(x)));
        };
        if index >= s {
            return shape_err(format!("token {index} out of range for length {s}"));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let at = (bi * s + index) * d;
            out.extend_from_slice(&xd[at..at + d]);
        }
        let y = Tensor::from_parts(vec![b, d], out);
        Ok(self.push(y, Op::SelectToken { x: x.0, index }, &[x.0]))
    }

    /// `B×S×D` → `B×D` averaged over the sequence.
    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let &[b, s, d] = self.shape(x) else {
            return shape_err(format!("expected B×S×D tokens, got {:?}", self.shape(x)));
        };
        let xd = self.value(x).data();
        let inv = T::one() / T::from_usize(s).unwrap();
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            for si in 0..s {
                let row = &xd[(bi * s + si) * d..(bi * s + si + 1) * d];
                for (o, &v) in out[bi * d..(bi + 1) * d].iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
        }
        for o in &mut out {
            *o = *o * inv;
        }
        let y = Tensor::from_parts(vec![b, d], out);
        Ok(self.push(y, Op::MeanTokens { x: x.0 }, &[x.0]))
    }

    /// Mean binary cross-entropy of `logits` (any shape, one logit per
    /// element) against {0,1} labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != labels.len() {
            return shape_err(format!(
                "{} logits but {} labels",
                z.len(),
                labels.len()
            ));
        }
        let mut total = T::zero();
        for (&zi, &yi) in z.iter().zip(labels) {
            total = total + bce_with_logits(zi, yi)?;
        }
        let y = Tensor::scalar(total / T::from_usize(labels.len()).unwrap());
        Ok(self.push(
            y,
            Op::BceLogits { logits: logits.0, labels: labels.to_vec() },
            &[logits.0],
        ))
    }

    /// Reverse accumulation from the scalar `loss`. A tape can be
    /// differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return invalid(format!(
                "backward needs a single-value loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        let mut order = Vec::new();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            order.push(i);
            for (target, contrib) in self.backward_node(i, &g) {
                if !self.nodes[target].needs_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }

        let mut params: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (name, idx) in &self.params {
            let g = grads[*idx]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[*idx].value.shape().to_vec()));
            match params.get_mut(name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    params.insert(name.clone(), g);
                }
            }
        }
        Ok(Gradients {
            params,
            vars: grads,
            order,
        })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv3d { x, w, b, geom } => {
                let gr = conv3d_backward(val(*x), val(*w), *geom, g).expect("validated in forward");
                let mut out = vec![(*x, gr.input), (*w, gr.weight)];
                if let Some(b) = b {
                    out.push((*b, gr.bias));
                }
                out
            }
            Op::MaxPool { x, argmax } => {
                vec![(*x, maxpool3d_backward(val(*x).shape(), node.value.shape(), argmax, g))]
            }
            Op::SpatialMean { x } => {
                let shape = val(*x).shape();
                let hw = shape[shape.len() - 2] * shape[shape.len() - 1];
                let inv = T::one() / T::from_usize(hw).unwrap();
                let mut dx = Vec::with_capacity(val(*x).len());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv * inv, hw));
                }
                vec![(*x, Tensor::from_parts(shape.to_vec(), dx))]
            }
            Op::BatchNorm { x, g: gain, b, cache, train } => {
                let (dx, dg, db) = batch_norm_backward(val(*x).shape(), val(*gain), cache, *train, g);
                vec![(*x, dx), (*gain, dg), (*b, db)]
            }
            Op::LayerNorm { x, g: gain, b, cache } => {
                let (dx, dg, db) = layer_norm_backward(val(*x).shape(), val(*gain), cache, g);
                vec![(*x, dx), (*gain, dg), (*b, db)]
            }
            Op::Act { x, kind } => {
                let xv = val(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                    .collect();
                vec![(*x, Tensor::from_parts(xv.shape().to_vec(), data))]
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = linear_backward(val(*x), val(*w), g);
                let mut out = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    out.push((*b, db));
                }
                out
            }
            Op::Softmax { x } => {
                let axis = node.value.ndim() - 1;
                vec![(*x, softmax_backward(&node.value, axis, g))]
            }
            Op::Attention { q, k, v, heads, head_dim, probs } => {
                let (dq, dk, dv) =
                    attention_core_backward(val(*q), val(*k), val(*v), probs, *heads, *head_dim, g);
                vec![(*q, dq), (*k, dk), (*v, dv)]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddBroadcast { a, b } => {
                let n = val(*b).len();
                let mut db = vec![T::zero(); n];
                for chunk in g.data().chunks(n) {
                    for (acc, &v) in db.iter_mut().zip(chunk) {
                        *acc = *acc + v;
                    }
                }
                vec![
                    (*a, g.clone()),
                    (*b, Tensor::from_parts(val(*b).shape().to_vec(), db)),
                ]
            }
            Op::Mul { a, b } => {
                let da = g.zip_map(val(*b), |gv, bv| gv * bv).expect("same shape");
                let db = g.zip_map(val(*a), |gv, av| gv * av).expect("same shape");
                vec![(*a, da), (*b, db)]
            }
            Op::Scale { x, factor } => vec![(*x, g.map(|v| v * *factor))],
            Op::Sum { x } => vec![(*x, Tensor::full(val(*x).shape().to_vec(), g.item()))],
            Op::Mean { x } => {
                let n = T::from_usize(val(*x).len()).unwrap();
                vec![(*x, Tensor::full(val(*x).shape().to_vec(), g.item() / n))]
            }
            Op::Reshape { x } => {
                let d = Tensor::from_parts(val(*x).shape().to_vec(), g.data().to_vec());
                vec![(*x, d)]
            }
            Op::SwapLastTwo { x } => vec![(*x, transpose_last_two(g))],
            Op::PrependToken { x, token } => {
                let &[b, s1, d] = node.value.shape() else { unreachable!() };
                let s = s1 - 1;
                let gd = g.data();
                let mut dx = Vec::with_capacity(b * s * d);
                let mut dt = vec![T::zero(); d];
                for bi in 0..b {
                    let base = bi * s1 * d;
                    for (acc, &v) in dt.iter_mut().zip(&gd[base..base + d]) {
                        *acc = *acc + v;
                    }
                    dx.extend_from_slice(&gd[base + d..base + s1 * d]);
                }
                vec![
                    (*x, Tensor::from_parts(vec![b, s, d], dx)),
                    (*token, Tensor::from_parts(vec![d], dt)),
                ]
            }
            Op::SelectToken { x, index } => {
                let &[b, s, d] = val(*x).shape() else { unreachable!() };
                let mut dx = vec![T::zero(); b * s * d];
                for bi in 0..b {
                    let at = (bi * s + index) * d;
                    dx[at..at + d].copy_from_slice(&g.data()[bi * d..(bi + 1) * d]);
                }
                vec![(*x, Tensor::from_parts(vec![b, s, d], dx))]
            }
            Op::MeanTokens { x } => {
                let &[b, s, d] = val(*x).shape() else { unreachable!() };
                let inv = T::one() / T::from_usize(s).unwrap();
                let mut dx = Vec::with_capacity(b * s * d);
                for bi in 0..b {
                    for _ in 0..s {
                        dx.extend(g.data()[bi * d..(bi + 1) * d].iter().map(|&v| v * inv));
                    }
                }
                vec![(*x, Tensor::from_parts(vec![b, s, d], dx))]
            }
            Op::BceLogits { logits, labels } => {
                let z = val(*logits);
                let n = T::from_usize(labels.len()).unwrap();
                let data = z
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zi, &yi)| g.item() * bce_with_logits_grad(zi, yi) / n)
                    .collect();
                vec![(*logits, Tensor::from_parts(z.shape().to_vec(), data))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_form_gradient_is_input() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.25]);
        let w = tape.param("w", Tensor::from_vec(vec![0.3, 0.1, -0.7]));
        let xv = tape.input(x.clone());
        let p = tape.mul(w, xv).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("w").unwrap(), &x);
    }

    #[test]
    fn bce_gradient_at_zero_logit() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param("z", Tensor::from_vec(vec![0.0]));
        let loss = tape.bce_with_logits(z, &[1.0]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("z").unwrap().data(), &[-0.5]);
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", Tensor::from_vec(vec![2.0]));
        tape.param("unused", Tensor::zeros(vec![2, 3]));
        let loss = tape.sum(a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("unused").unwrap(), &Tensor::zeros(vec![2, 3]));
    }

    #[test]
    fn second_backward_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", Tensor::from_vec(vec![2.0]));
        let loss = tape.sum(a);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn visits_nodes_in_reverse_execution_order() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.scale(a, 3.0);
        let c = tape.activation(b, Activation::Gelu);
        let d = tape.add(c, a).unwrap();
        let loss = tape.mean(d);
        let g = tape.backward(loss).unwrap();
        let order = g.visit_order();
        assert_eq!(order, &[loss.index(), d.index(), c.index(), b.index(), a.index()]);
    }

    #[test]
    fn prepend_select_round_trip_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", Tensor::from_fn(vec![2, 3, 2], |i| i as f64));
        let t = tape.param("t", Tensor::from_vec(vec![10.0, 20.0]));
        let z = tape.prepend_token(x, t).unwrap();
        assert_eq!(tape.shape(z), &[2, 4, 2]);
        let first = tape.select_token(z, 0).unwrap();
        assert_eq!(tape.value(first).data(), &[10.0, 20.0, 10.0, 20.0]);
        let loss = tape.sum(first);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("t").unwrap().data(), &[2.0, 2.0]);
        assert!(g.param("x").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
