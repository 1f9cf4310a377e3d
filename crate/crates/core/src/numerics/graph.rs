//! Reverse-mode automatic differentiation over the operation set the codec needs.
//!
//! A [`Graph`] records operations as they are evaluated. Each [`Var`] carries its
//! value and, when it depends on a tracked leaf, the id of the node that produced it.
//! Nodes are appended in evaluation order, which is a topological order, so
//! [`Graph::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{FlicError, Result};

pub type NodeId = usize;

enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul(Arc<Tensor<T>>, Arc<Tensor<T>>),
    Div(Arc<Tensor<T>>, Arc<Tensor<T>>),
    Scale(T),
    Offset,
    AddPrefix { inner: usize, vshape: Vec<usize> },
    MulPrefix { x: Arc<Tensor<T>>, v: Arc<Tensor<T>>, inner: usize },
    Square(Arc<Tensor<T>>),
    Sqrt(Arc<Tensor<T>>),
    Exp(Arc<Tensor<T>>),
    Log(Arc<Tensor<T>>),
    Tanh(Arc<Tensor<T>>),
    Sigmoid(Arc<Tensor<T>>),
    Softplus(Arc<Tensor<T>>),
    LeakyRelu { x: Arc<Tensor<T>>, slope: T },
    Powf { x: Arc<Tensor<T>>, p: T },
    LowerBound { x: Arc<Tensor<T>>, bound: T },
    ClampMin { x: Arc<Tensor<T>>, bound: T },
    Sum { shape: Vec<usize> },
    Mean { shape: Vec<usize> },
    Reshape { from: Vec<usize> },
    Conv2d { x: Arc<Tensor<T>>, w: Arc<Tensor<T>>, geom: ConvGeom },
    Depthwise { kernel: Arc<Tensor<T>>, stride: usize, in_shape: Vec<usize> },
    PadReplicate { in_shape: Vec<usize> },
    Crop { in_shape: Vec<usize> },
    PixelShuffle,
    PixelUnshuffle,
    ChannelMatmul { m: Arc<Tensor<T>>, x: Arc<Tensor<T>> },
    SigmoidDiff { upper: Arc<Tensor<T>>, lower: Arc<Tensor<T>> },
}

struct Node<T> {
    inputs: Vec<Option<NodeId>>,
    op: Op<T>,
}

/// Operation recorder. A graph built with [`Graph::no_grad`] evaluates eagerly and
/// records nothing.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value in a [`Graph`].
#[derive(Clone)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: Option<NodeId>,
    value: Arc<Tensor<T>>,
}

/// Gradients of a scalar with respect to every reachable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<NodeId, Tensor<T>>,
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Gradients {
            leaves: HashMap::new(),
        }
    }
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.leaves.get(&id))
    }

    pub(crate) fn get_id(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.leaves.get(&id)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: true,
        }
    }

    pub fn no_grad() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf (tracked only when the graph records).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        if !self.record {
            return self.constant_shared(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            op: Op::Leaf,
        });
        Var {
            graph: self,
            id: Some(nodes.len() - 1),
            value,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        Var {
            graph: self,
            id: None,
            value,
        }
    }

    fn push(&self, inputs: &[&Var<'_, T>], value: Tensor<T>, op: impl FnOnce() -> Op<T>) -> Var<'_, T> {
        self.push_shared(inputs, Arc::new(value), op)
    }

    fn push_shared(
        &self,
        inputs: &[&Var<'_, T>],
        value: Arc<Tensor<T>>,
        op: impl FnOnce() -> Op<T>,
    ) -> Var<'_, T> {
        let ids: Vec<Option<NodeId>> = inputs.iter().map(|v| v.id).collect();
        let id = if self.record && ids.iter().any(Option::is_some) {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                inputs: ids,
                op: op(),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var {
            graph: self,
            id,
            value,
        }
    }

    /// Numerically stable `sigmoid(upper) - sigmoid(lower)`, the probability mass a
    /// logistic-CDF network assigns between two points.
    pub fn sigmoid_diff<'g>(&'g self, upper: &Var<'g, T>, lower: &Var<'g, T>) -> Result<Var<'g, T>> {
        let value = upper.value.zip_map(&lower.value, |u, l| {
            let s = if u + l > T::zero() { -T::one() } else { T::one() };
            (sigmoid(s * u) - sigmoid(s * l)).abs()
        })?;
        let (u, l) = (upper.value.clone(), lower.value.clone());
        Ok(self.push(&[upper, lower], value, || Op::SigmoidDiff { upper: u, lower: l }))
    }

    /// Sweeps the recorded graph backwards from the scalar `loss`.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(FlicError::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let Some(root) = loss.id else {
            return Ok(Gradients::default());
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.value.shape(), T::one()));
        let mut leaves = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                leaves.insert(id, g);
                continue;
            }
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = node_backward(&node.op, &g, &needs);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(i), Some(ig)) = (input, ig) {
                    match &mut grads[*i] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn map_grad<T: Real>(g: &Tensor<T>, saved: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        g.shape().to_vec(),
        g.data().iter().zip(saved.data()).map(|(&g, &s)| f(g, s)).collect(),
    )
}

fn node_backward<T: Real>(op: &Op<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), want(1).then(|| g.map(|v| -v))],
        Op::Mul(a, b) => vec![
            want(0).then(|| map_grad(g, b, |g, b| g * b)),
            want(1).then(|| map_grad(g, a, |g, a| g * a)),
        ],
        Op::Div(a, b) => vec![
            want(0).then(|| map_grad(g, b, |g, b| g / b)),
            want(1).then(|| {
                let ga = map_grad(g, a, |g, a| g * a);
                map_grad(&ga, b, |ga, b| -ga / (b * b))
            }),
        ],
        Op::Scale(s) => vec![Some(g.map(|v| v * *s))],
        Op::Offset => vec![Some(g.clone())],
        Op::AddPrefix { inner, vshape } => {
            let reduced = want(1).then(|| {
                let n = g.len() / inner;
                let data = (0..n)
                    .map(|i| g.data()[i * inner..(i + 1) * inner].iter().copied().sum())
                    .collect();
                Tensor::from_parts(vshape.clone(), data)
            });
            vec![Some(g.clone()), reduced]
        }
        Op::MulPrefix { x, v, inner } => {
            let gx = want(0).then(|| {
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * v.data()[i / inner])
                    .collect();
                Tensor::from_parts(g.shape().to_vec(), data)
            });
            let gv = want(1).then(|| {
                let data = (0..v.len())
                    .map(|j| {
                        let r = j * inner..(j + 1) * inner;
                        g.data()[r.clone()]
                            .iter()
                            .zip(&x.data()[r])
                            .map(|(&a, &b)| a * b)
                            .sum()
                    })
                    .collect();
                Tensor::from_parts(v.shape().to_vec(), data)
            });
            vec![gx, gv]
        }
        Op::Square(x) => vec![Some(map_grad(g, x, |g, x| g * (x + x)))],
        Op::Sqrt(y) => vec![Some(map_grad(g, y, |g, y| g / (y + y)))],
        Op::Exp(y) => vec![Some(map_grad(g, y, |g, y| g * y))],
        Op::Log(x) => vec![Some(map_grad(g, x, |g, x| g / x))],
        Op::Tanh(y) => vec![Some(map_grad(g, y, |g, y| g * (T::one() - y * y)))],
        Op::Sigmoid(y) => vec![Some(map_grad(g, y, |g, y| g * y * (T::one() - y)))],
        Op::Softplus(x) => vec![Some(map_grad(g, x, |g, x| g * sigmoid(x)))],
        Op::LeakyRelu { x, slope } => vec![Some(map_grad(g, x, |g, x| {
            if x >= T::zero() {
                g
            } else {
                g * *slope
            }
        }))],
        Op::Powf { x, p } => vec![Some(map_grad(g, x, |g, x| g * *p * x.powf(*p - T::one())))],
        Op::LowerBound { x, bound } => vec![Some(map_grad(g, x, |g, x| {
            if x >= *bound || g < T::zero() {
                g
            } else {
                T::zero()
            }
        }))],
        Op::ClampMin { x, bound } => vec![Some(map_grad(g, x, |g, x| {
            if x >= *bound {
                g
            } else {
                T::zero()
            }
        }))],
        Op::Sum { shape } => vec![Some(Tensor::full(shape, g.data()[0]))],
        Op::Mean { shape } => {
            let n = T::from_f64(shape.iter().product::<usize>() as f64);
            vec![Some(Tensor::full(shape, g.data()[0] / n))]
        }
        Op::Reshape { from } => vec![Some(Tensor::from_parts(from.clone(), g.data().to_vec()))],
        Op::Conv2d { x, w, geom } => vec![
            want(0).then(|| kernels::conv2d_backward_input(w, g, geom)),
            want(1).then(|| kernels::conv2d_backward_weight(x, g, geom)),
        ],
        Op::Depthwise {
            kernel,
            stride,
            in_shape,
        } => vec![Some(kernels::depthwise_backward(in_shape, kernel, *stride, g))],
        Op::PadReplicate { in_shape } => vec![Some(kernels::pad_replicate_backward(in_shape, g))],
        Op::Crop { in_shape } => vec![Some(kernels::crop_backward(in_shape, g))],
        Op::PixelShuffle => vec![Some(kernels::pixel_unshuffle(g).expect("shape recorded"))],
        Op::PixelUnshuffle => vec![Some(kernels::pixel_shuffle(g).expect("shape recorded"))],
        Op::ChannelMatmul { m, x } => {
            let (dm, dx) = kernels::channel_matmul_backward(m, x, g);
            vec![Some(dm), Some(dx)]
        }
        Op::SigmoidDiff { upper, lower } => {
            // d|s(u) - s(l)| = sign(s(u) - s(l)) * (s'(u) du - s'(l) dl)
            let n = g.len();
            let mut gu = Vec::with_capacity(n);
            let mut gl = Vec::with_capacity(n);
            for i in 0..n {
                let (u, l) = (upper.data()[i], lower.data()[i]);
                let sign = if u >= l { T::one() } else { -T::one() };
                let du = sigmoid(u) * sigmoid(-u);
                let dl = sigmoid(l) * sigmoid(-l);
                gu.push(g.data()[i] * sign * du);
                gl.push(-g.data()[i] * sign * dl);
            }
            vec![
                Some(Tensor::from_parts(g.shape().to_vec(), gu)),
                Some(Tensor::from_parts(g.shape().to_vec(), gl)),
            ]
        }
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> Option<NodeId> {
        self.id
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    fn unary(&self, f: impl Fn(T) -> T, op: impl FnOnce(Arc<Tensor<T>>, Arc<Tensor<T>>) -> Op<T>) -> Self {
        let y = Arc::new(self.value.map(f));
        let x = self.value.clone();
        self.graph.push_shared(&[self], y.clone(), || op(x, y))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let v = self.value.zip_map(&other.value, |a, b| a + b)?;
        Ok(self.graph.push(&[self, other], v, || Op::Add))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let v = self.value.zip_map(&other.value, |a, b| a - b)?;
        Ok(self.graph.push(&[self, other], v, || Op::Sub))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let v = self.value.zip_map(&other.value, |a, b| a * b)?;
        let (a, b) = (self.value.clone(), other.value.clone());
        Ok(self.graph.push(&[self, other], v, || Op::Mul(a, b)))
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        let v = self.value.zip_map(&other.value, |a, b| a / b)?;
        let (a, b) = (self.value.clone(), other.value.clone());
        Ok(self.graph.push(&[self, other], v, || Op::Div(a, b)))
    }

    pub fn scale(&self, s: T) -> Self {
        let v = self.value.map(|x| x * s);
        self.graph.push(&[self], v, || Op::Scale(s))
    }

    pub fn offset(&self, s: T) -> Self {
        let v = self.value.map(|x| x + s);
        self.graph.push(&[self], v, || Op::Offset)
    }

    /// Adds `v[i]` to every element of the sub-block indexed by `i`, where `v`'s shape is a
    /// leading prefix of `self`'s shape.
    pub fn add_prefix(&self, v: &Self) -> Result<Self> {
        let inner = kernels::prefix_inner(self.shape(), v.shape())?;
        let data = self
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + v.value.data()[i / inner])
            .collect();
        let value = Tensor::from_parts(self.shape().to_vec(), data);
        Ok(self.graph.push(&[self, v], value, || Op::AddPrefix {
            inner,
            vshape: v.shape().to_vec(),
        }))
    }

    /// Prefix-broadcast multiply, see [`Var::add_prefix`].
    pub fn mul_prefix(&self, v: &Self) -> Result<Self> {
        let inner = kernels::prefix_inner(self.shape(), v.shape())?;
        let data = self
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * v.value.data()[i / inner])
            .collect();
        let value = Tensor::from_parts(self.shape().to_vec(), data);
        let (x, vv) = (self.value.clone(), v.value.clone());
        Ok(self.graph.push(&[self, v], value, || Op::MulPrefix { x, v: vv, inner }))
    }

    pub fn square(&self) -> Self {
        self.unary(|x| x * x, |x, _| Op::Square(x))
    }

    pub fn sqrt(&self) -> Self {
        self.unary(|x| x.sqrt(), |_, y| Op::Sqrt(y))
    }

    pub fn exp(&self) -> Self {
        self.unary(|x| x.exp(), |_, y| Op::Exp(y))
    }

    pub fn ln(&self) -> Self {
        self.unary(|x| x.ln(), |x, _| Op::Log(x))
    }

    pub fn tanh(&self) -> Self {
        self.unary(|x| x.tanh(), |_, y| Op::Tanh(y))
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(sigmoid, |_, y| Op::Sigmoid(y))
    }

    pub fn softplus(&self) -> Self {
        self.unary(softplus, |x, _| Op::Softplus(x))
    }

    /// `x` for `x >= 0`, `slope * x` otherwise. The derivative at 0 is taken as 1.
    pub fn leaky_relu(&self, slope: T) -> Self {
        self.unary(
            move |x| if x >= T::zero() { x } else { x * slope },
            move |x, _| Op::LeakyRelu { x, slope },
        )
    }

    pub fn powf(&self, p: T) -> Self {
        self.unary(move |x| x.powf(p), move |x, _| Op::Powf { x, p })
    }

    /// `max(x, bound)`; the gradient still flows below the bound when it points upward.
    pub fn lower_bound(&self, bound: T) -> Self {
        self.unary(move |x| x.max(bound), move |x, _| Op::LowerBound { x, bound })
    }

    /// `max(x, bound)` with zero gradient below the bound.
    pub fn clamp_min(&self, bound: T) -> Self {
        self.unary(move |x| x.max(bound), move |x, _| Op::ClampMin { x, bound })
    }

    pub fn sum(&self) -> Self {
        let shape = self.shape().to_vec();
        let v = Tensor::scalar(self.value.sum());
        self.graph.push(&[self], v, || Op::Sum { shape })
    }

    pub fn mean(&self) -> Self {
        let shape = self.shape().to_vec();
        let n = T::from_f64(self.value.len() as f64);
        let v = Tensor::scalar(self.value.sum() / n);
        self.graph.push(&[self], v, || Op::Mean { shape })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let v = self.value.reshape(shape)?;
        let from = self.shape().to_vec();
        Ok(self.graph.push(&[self], v, || Op::Reshape { from }))
    }

    /// Bias-free 2-D convolution of a `[Cin,H,W]` input with `[Cout,Cin,k,k]` weights and
    /// symmetric zero padding.
    pub fn conv2d(&self, w: &Self, stride: usize, padding: usize) -> Result<Self> {
        let geom = ConvGeom::new(self.shape(), w.shape(), stride, padding)?;
        let v = kernels::conv2d_forward(&self.value, &w.value, &geom);
        let (x, wv) = (self.value.clone(), w.value.clone());
        Ok(self.graph.push(&[self, w], v, || Op::Conv2d { x, w: wv, geom }))
    }

    /// Per-channel strided filtering with a fixed (non-trainable) 2-D kernel, no padding.
    pub fn depthwise(&self, kernel: Arc<Tensor<T>>, stride: usize) -> Result<Self> {
        let v = kernels::depthwise_forward(&self.value, &kernel, stride)?;
        let in_shape = self.shape().to_vec();
        Ok(self.graph.push(&[self], v, || Op::Depthwise {
            kernel,
            stride,
            in_shape,
        }))
    }

    pub fn pad_replicate(&self, pad_h: usize, pad_w: usize) -> Result<Self> {
        if pad_h == 0 && pad_w == 0 {
            return Ok(self.clone());
        }
        let v = kernels::pad_replicate_forward(&self.value, pad_h, pad_w)?;
        let in_shape = self.shape().to_vec();
        Ok(self.graph.push(&[self], v, || Op::PadReplicate { in_shape }))
    }

    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        let (_, hi, wi) = self.value.dims3()?;
        if (h, w) == (hi, wi) {
            return Ok(self.clone());
        }
        let v = kernels::crop_forward(&self.value, h, w)?;
        let in_shape = self.shape().to_vec();
        Ok(self.graph.push(&[self], v, || Op::Crop { in_shape }))
    }

    pub fn pixel_shuffle(&self) -> Result<Self> {
        let v = kernels::pixel_shuffle(&self.value)?;
        Ok(self.graph.push(&[self], v, || Op::PixelShuffle))
    }

    pub fn pixel_unshuffle(&self) -> Result<Self> {
        let v = kernels::pixel_unshuffle(&self.value)?;
        Ok(self.graph.push(&[self], v, || Op::PixelUnshuffle))
    }

    /// `self[C,O,I] x x[C,I,N] -> [C,O,N]`.
    pub fn channel_matmul(&self, x: &Self) -> Result<Self> {
        let v = kernels::channel_matmul_forward(&self.value, &x.value)?;
        let (m, xv) = (self.value.clone(), x.value.clone());
        Ok(self.graph.push(&[self, x], v, || Op::ChannelMatmul { m, x: xv }))
    }
}
