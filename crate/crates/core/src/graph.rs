//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every tensor created through a [`Graph`] lives in its arena and is
//! addressed by a [`TensorId`]. Operations whose output depends on a tensor
//! with `requires_grad` are appended to the node list in execution order, so
//! the list is always topologically sorted. [`Graph::backward`] walks it in
//! reverse, summing contributions for tensors used more than once, and adds
//! the result to each tensor's `grad` buffer. Gradients accumulate across
//! calls until [`Graph::zero_grad`].

use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::nn::{activation, batchnorm, conv, pool, softmax};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Add {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Sum {
        x: TensorId,
    },
    NarrowChannels {
        x: TensorId,
        start: usize,
    },
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: conv::ConvSpec,
    },
    ConvTranspose2d {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: conv::ConvSpec,
    },
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        cache: batchnorm::BnCache<T>,
    },
    Relu {
        x: TensorId,
    },
    Gelu {
        x: TensorId,
    },
    MaxPool2d {
        x: TensorId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: TensorId,
    },
    SoftmaxChannels {
        x: TensorId,
    },
    DiceLoss {
        probs: TensorId,
        target: TensorId,
        eps: f64,
    },
}

impl<T> Op<T> {
    pub(crate) fn tag(&self) -> &'static str {
        match self {
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Sum { .. } => "sum",
            Op::NarrowChannels { .. } => "narrow_channels",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Relu { .. } => "relu",
            Op::Gelu { .. } => "gelu",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::SoftmaxChannels { .. } => "softmax_channels",
            Op::DiceLoss { .. } => "dice_loss",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<TensorId> {
        match *self {
            Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::DiceLoss { probs, target, .. } => vec![probs, target],
            Op::Sum { x }
            | Op::NarrowChannels { x, .. }
            | Op::Relu { x }
            | Op::Gelu { x }
            | Op::MaxPool2d { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::SoftmaxChannels { x } => vec![x],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) output: TensorId,
}

/// Summary of one recorded node, for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeInfo {
    pub tag: &'static str,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T = f64> {
    tensors: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            nodes: Vec::new(),
        }
    }

    /// Insert a tensor as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor<T>) -> TensorId {
        let id = TensorId(self.tensors.len());
        self.tensors.push(t);
        id
    }

    /// Insert a constant (no gradient).
    pub fn constant(&mut self, mut t: Tensor<T>) -> TensorId {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Insert a differentiable leaf.
    pub fn param(&mut self, mut t: Tensor<T>) -> TensorId {
        t.set_requires_grad(true);
        self.leaf(t)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.tensors[id.0].shape()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.tensors[id.0].grad()
    }

    pub fn take(&mut self, id: TensorId) -> Tensor<T> {
        std::mem::replace(&mut self.tensors[id.0], Tensor::scalar(T::zero()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn nodes(&self) -> Vec<NodeInfo> {
        self.nodes
            .iter()
            .map(|n| NodeInfo {
                tag: n.op.tag(),
                inputs: n.op.inputs(),
                output: n.output,
            })
            .collect()
    }

    /// Hash of the active branch of every recorded relu and maxpool node.
    /// Two evaluations with equal signatures lie in the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.tensors[x.0].data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub(crate) fn requires_grad(&self, id: TensorId) -> bool {
        self.tensors[id.0].requires_grad()
    }

    /// Store an operation result; a node is recorded only if some input is
    /// differentiable.
    pub(crate) fn record(&mut self, op: Op<T>, mut out: Tensor<T>) -> TensorId {
        let tracked = op.inputs().iter().any(|&i| self.requires_grad(i));
        out.set_requires_grad(tracked);
        let id = self.leaf(out);
        if tracked {
            self.nodes.push(Node { op, output: id });
        }
        id
    }

    /// Propagate `∂loss/∂t` into the `grad` buffer of every differentiable
    /// tensor `t` that `loss` depends on.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.tensors[loss.0].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.tensors[loss.0].shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.tensors.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for node_idx in (0..self.nodes.len()).rev() {
            let out = self.nodes[node_idx].output;
            let Some(gy) = grads[out.0].take() else {
                continue;
            };
            let contributions = self.backward_node(&self.nodes[node_idx], &gy)?;
            for (id, g) in contributions {
                if self.requires_grad(id) {
                    accumulate(&mut grads, id, g);
                }
            }
            self.tensors[out.0].accumulate_grad(&gy);
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.tensors[i].requires_grad() {
                    self.tensors[i].accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T]) -> Result<Vec<(TensorId, Vec<T>)>> {
        let op = &node.op;
        let need = |id: TensorId| self.requires_grad(id);
        let val = |id: TensorId| &self.tensors[id.0];
        let mut out = Vec::new();
        match op {
            Op::Add { a, b } => {
                let plan = Broadcast::new("add", val(*a).shape(), val(*b).shape())?;
                if need(*a) {
                    out.push((*a, plan.reduce_a(gy, |g, _, _| g, val(*a), val(*b))));
                }
                if need(*b) {
                    out.push((*b, plan.reduce_b(gy, |g, _, _| g, val(*a), val(*b))));
                }
            }
            Op::Mul { a, b } => {
                let plan = Broadcast::new("mul", val(*a).shape(), val(*b).shape())?;
                if need(*a) {
                    out.push((*a, plan.reduce_a(gy, |g, _, bv| g * bv, val(*a), val(*b))));
                }
                if need(*b) {
                    out.push((*b, plan.reduce_b(gy, |g, av, _| g * av, val(*a), val(*b))));
                }
            }
            Op::Sum { x } => out.push((*x, vec![gy[0]; val(*x).numel()])),
            Op::NarrowChannels { x, start } => {
                let [n, c, h, w] = val(*x).dims4()?;
                let len = gy.len() / (n * h * w);
                let plane = h * w;
                let mut gx = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    let src = &gy[b * len * plane..(b + 1) * len * plane];
                    let dst = (b * c + start) * plane;
                    gx[dst..dst + len * plane].copy_from_slice(src);
                }
                out.push((*x, gx));
            }
            Op::Conv2d { x, w, b, spec } => {
                let need_b = b.is_some_and(need);
                let g = conv::conv2d_backward(val(*x), val(*w), *spec, gy, need(*x), need(*w), need_b);
                push_conv_grads(&mut out, *x, *w, *b, g);
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let need_b = b.is_some_and(need);
                let g = conv::conv_transpose2d_backward(
                    val(*x),
                    val(*w),
                    *spec,
                    gy,
                    need(*x),
                    need(*w),
                    need_b,
                );
                push_conv_grads(&mut out, *x, *w, *b, g);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let g = batchnorm::backward(cache, val(*x).shape(), val(*gamma).data(), gy);
                if need(*x) {
                    out.push((*x, g.dx));
                }
                if need(*gamma) {
                    out.push((*gamma, g.dgamma));
                }
                if need(*beta) {
                    out.push((*beta, g.dbeta));
                }
            }
            Op::Relu { x } => out.push((*x, activation::relu_backward(val(*x).data(), gy))),
            Op::Gelu { x } => out.push((*x, activation::gelu_backward(val(*x).data(), gy))),
            Op::MaxPool2d { x, argmax } => {
                out.push((*x, pool::maxpool2d_backward(argmax, val(*x).numel(), gy)))
            }
            Op::GlobalAvgPool { x } => {
                out.push((*x, pool::global_avg_pool_backward(val(*x).shape(), gy)))
            }
            Op::SoftmaxChannels { x } => {
                let y = val(node.output);
                out.push((*x, softmax::softmax_channels_backward(y, gy)?));
            }
            Op::DiceLoss {
                probs,
                target,
                eps,
            } => {
                if need(*probs) {
                    out.push((
                        *probs,
                        dice::dice_loss_backward(val(*probs), val(*target), *eps, gy[0])?,
                    ));
                }
            }
        }
        Ok(out)
    }

    /// Element-wise `a + b`; `b` may broadcast (size-1 axes, or a length-C
    /// vector against the channel axis).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.record(Op::Add { a, b }, out))
    }

    /// Element-wise `a ⊙ b` with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.record(Op::Mul { a, b }, out))
    }

    fn binary(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        let plan = Broadcast::new(op, ta.shape(), tb.shape())?;
        let data = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut data = Vec::with_capacity(plan.numel());
            plan.for_each(|_, ia, ib| data.push(f(ta.data()[ia], tb.data()[ib])));
            data
        };
        Tensor::from_vec(&plan.out_shape, data)
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.value(x).sum();
        Ok(self.record(Op::Sum { x }, Tensor::scalar(s)))
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn narrow_channels(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::Contract(format!(
                "channel range {start}..{} outside 0..{c}",
                start + len
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let from = (b * c + start) * plane;
            data.extend_from_slice(&t.data()[from..from + len * plane]);
        }
        let out = Tensor::from_vec(&[n, len, h, w], data)?;
        Ok(self.record(Op::NarrowChannels { x, start }, out))
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], id: TensorId, g: Vec<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

fn push_conv_grads<T>(
    out: &mut Vec<(TensorId, Vec<T>)>,
    x: TensorId,
    w: TensorId,
    b: Option<TensorId>,
    g: conv::ConvGrads<T>,
) {
    if let Some(dx) = g.dx {
        out.push((x, dx));
    }
    if let Some(dw) = g.dw {
        out.push((w, dw));
    }
    if let (Some(b), Some(db)) = (b, g.db) {
        out.push((b, db));
    }
}

/// Index mapping for a broadcast binary operation.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let b_eff: Vec<usize> = if b.len() == 1 && a.len() >= 2 && b[0] == a[1] && b[0] > 1 {
            let mut v = vec![1; a.len()];
            v[1] = b[0];
            v
        } else {
            b.to_vec()
        };
        if a.len() != b_eff.len() {
            return Err(Error::mismatch(op, a, b));
        }
        let mut out_shape = Vec::with_capacity(a.len());
        for (&da, &db) in a.iter().zip(&b_eff) {
            out_shape.push(match (da, db) {
                _ if da == db => da,
                (1, d) | (d, 1) => d,
                _ => return Err(Error::mismatch(op, a, b)),
            });
        }
        Ok(Self {
            a_strides: broadcast_strides(a, &out_shape),
            b_strides: broadcast_strides(&b_eff, &out_shape),
            out_shape,
        })
    }

    fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` in row-major output order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let mut counter = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..self.numel() {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                counter[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if counter[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * counter[d];
                ib -= self.b_strides[d] * counter[d];
                counter[d] = 0;
            }
        }
    }

    fn reduce_a<T: Element>(
        &self,
        gy: &[T],
        f: impl Fn(T, T, T) -> T,
        a: &Tensor<T>,
        b: &Tensor<T>,
    ) -> Vec<T> {
        let mut g = vec![T::zero(); a.numel()];
        self.for_each(|o, ia, ib| g[ia] = g[ia] + f(gy[o], a.data()[ia], b.data()[ib]));
        g
    }

    fn reduce_b<T: Element>(
        &self,
        gy: &[T],
        f: impl Fn(T, T, T) -> T,
        a: &Tensor<T>,
        b: &Tensor<T>,
    ) -> Vec<T> {
        let mut g = vec![T::zero(); b.numel()];
        self.for_each(|o, ia, ib| g[ib] = g[ib] + f(gy[o], a.data()[ia], b.data()[ib]));
        g
    }
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}
