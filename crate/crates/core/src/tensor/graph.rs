use std::collections::HashMap;

use super::kernels::{self, ConvGeom, Layout};
use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to this interval before any logarithm.
pub const PROB_CLAMP: (f64, f64) = (1e-7, 1.0 - 1e-7);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operator kinds. Image tensors are `[batch, channels, height, width]`;
/// `Softmax` and `GatherOneHot` act on axis 1.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf { requires_grad: bool },
    Add,
    ScalarMul(f64),
    Mul,
    MatMul,
    /// Inputs: image, weight `[out, in, kh, kw]`, optional bias `[out]`.
    Conv2d { stride: usize, padding: usize },
    UpsampleNearest { factor: usize },
    LeakyRelu { slope: f64 },
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    /// Natural log of the input clamped to `[lo, hi]`.
    Log { lo: f64, hi: f64 },
    Square,
    Clamp { lo: f64, hi: f64 },
    ReduceMean,
    ReduceSum,
    Concat { axis: usize },
    /// Inputs: values `[n, c, ...]`, class indices `[n, ...]` stored as
    /// scalars. Picks the value of the indexed class at each position.
    GatherOneHot,
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add => "add",
            Op::ScalarMul(_) => "scalar_mul",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::UpsampleNearest { .. } => "upsample",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::Log { .. } => "log",
            Op::Square => "square",
            Op::Clamp { .. } => "clamp",
            Op::ReduceMean => "mean",
            Op::ReduceSum => "sum",
            Op::Concat { .. } => "concat",
            Op::GatherOneHot => "gather_one_hot",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    pub name: String,
}

/// Topologically ordered operator records. Nodes can only consume nodes
/// created before them, so the graph is acyclic by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf values for one evaluation.
#[derive(Debug)]
pub struct Feeds<'a, T> {
    map: HashMap<NodeId, &'a Tensor<T>>,
}

impl<T> Clone for Feeds<'_, T> {
    fn clone(&self) -> Self {
        Feeds { map: self.map.clone() }
    }
}

impl<T> Default for Feeds<'_, T> {
    fn default() -> Self {
        Feeds { map: HashMap::new() }
    }
}

impl<'a, T> Feeds<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: NodeId, value: &'a Tensor<T>) -> &mut Self {
        self.map.insert(node, value);
        self
    }

    pub fn get(&self, node: NodeId) -> Option<&'a Tensor<T>> {
        self.map.get(&node).copied()
    }
}

/// Activations of every node after a forward pass.
#[derive(Clone, Debug)]
pub struct Values<T> {
    vals: Vec<Tensor<T>>,
}

impl<T> Values<T> {
    pub fn get(&self, node: NodeId) -> &Tensor<T> {
        &self.vals[node.0]
    }
}

/// Gradients of a scalar loss with respect to selected leaves.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    map: HashMap<NodeId, Tensor<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.map.get(&node)
    }

    pub fn take(&mut self, node: NodeId) -> Option<Tensor<T>> {
        self.map.remove(&node)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Leaves flagged `requires_grad`.
    pub fn params(&self) -> Vec<NodeId> {
        self.nodes()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { requires_grad: true }))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes().find(|(_, n)| n.name == name).map(|(id, _)| id)
    }

    fn label(&self, id: NodeId) -> String {
        let n = &self.nodes[id.0];
        format!("{}#{} `{}`", n.op.kind(), id.0, n.name)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>, name: String) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs, shape, name });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &Op, inputs: &[NodeId], detail: String) -> Error {
        let ins: Vec<String> = inputs.iter().map(|&i| self.label(i)).collect();
        Error::Shape {
            node: format!("{}#{} (inputs {})", op.kind(), self.nodes.len(), ins.join(", ")),
            detail,
        }
    }

    fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let name = format!("{}#{}", op.kind(), self.nodes.len());
        self.push(op, vec![x], shape, name)
    }

    fn same_shape(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            let detail = format!("{:?} vs {:?}", self.shape(a), self.shape(b));
            return Err(self.shape_err(&op, &[a, b], detail));
        }
        let shape = self.shape(a).to_vec();
        let name = format!("{}#{}", op.kind(), self.nodes.len());
        Ok(self.push(op, vec![a, b], shape, name))
    }

    pub fn leaf(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        self.push(Op::Leaf { requires_grad }, vec![], shape.to_vec(), name.to_string())
    }

    /// Constant leaf (data, labels, detached activations).
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, shape, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, shape, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(Op::Add, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(Op::Mul, a, b)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::ScalarMul(c), x)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err(&Op::MatMul, &[a, b], format!("{sa:?} x {sb:?}")));
        }
        let name = format!("matmul#{}", self.nodes.len());
        Ok(self.push(Op::MatMul, vec![a, b], vec![sa[0], sb[1]], name))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let op = Op::Conv2d { stride, padding };
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            return Err(self.shape_err(&op, &inputs, format!("image {sx:?}, weight {sw:?}, stride {stride}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                let detail = format!("bias {:?} for {} output channels", self.shape(b), sw[0]);
                return Err(self.shape_err(&op, &inputs, detail));
            }
        }
        if sx[2] + 2 * padding < sw[2] || sx[3] + 2 * padding < sw[3] {
            return Err(self.shape_err(&op, &inputs, format!("kernel {sw:?} larger than padded image {sx:?}")));
        }
        let geom = conv_geom(&sx, &sw, stride, padding);
        let shape = vec![sx[0], sw[0], geom.out_height(), geom.out_width()];
        let name = format!("conv2d#{}", self.nodes.len());
        Ok(self.push(op, inputs, shape, name))
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let op = Op::UpsampleNearest { factor };
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(self.shape_err(&op, &[x], format!("{s:?} by {factor}")));
        }
        let shape = vec![s[0], s[1], s[2] * factor, s[3] * factor];
        let name = format!("upsample#{}", self.nodes.len());
        Ok(self.push(op, vec![x], shape, name))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(Op::LeakyRelu { slope }, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, x)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        if self.shape(x).len() < 2 {
            let detail = format!("softmax needs a channel axis, got {:?}", self.shape(x));
            return Err(self.shape_err(&Op::Softmax, &[x], detail));
        }
        Ok(self.unary(Op::Softmax, x))
    }

    /// Logarithm with the input clamped to [`PROB_CLAMP`].
    pub fn log(&mut self, x: NodeId) -> NodeId {
        let (lo, hi) = PROB_CLAMP;
        self.unary(Op::Log { lo, hi }, x)
    }

    pub fn log_clamped(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Log { lo, hi }, x)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Square, x)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp { lo, hi }, x)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let name = format!("mean#{}", self.nodes.len());
        self.push(Op::ReduceMean, vec![x], vec![], name)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let name = format!("sum#{}", self.nodes.len());
        self.push(Op::ReduceSum, vec![x], vec![], name)
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let op = Op::Concat { axis };
        let first = *xs
            .first()
            .ok_or_else(|| self.shape_err(&op, xs, "nothing to concatenate".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(self.shape_err(&op, xs, format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                let detail = format!("{s:?} vs {base:?} along axis {axis}");
                return Err(self.shape_err(&op, xs, detail));
            }
            total += s[axis];
        }
        let mut shape = base;
        shape[axis] = total;
        let name = format!("concat#{}", self.nodes.len());
        Ok(self.push(op, xs.to_vec(), shape, name))
    }

    pub fn gather_one_hot(&mut self, x: NodeId, index: NodeId) -> Result<NodeId> {
        let (sx, si) = (self.shape(x).to_vec(), self.shape(index).to_vec());
        let mut expect = vec![sx.first().copied().unwrap_or(0)];
        expect.extend(sx.iter().skip(2));
        if sx.len() < 2 || si != expect {
            let detail = format!("values {sx:?}, indices {si:?}");
            return Err(self.shape_err(&Op::GatherOneHot, &[x, index], detail));
        }
        let name = format!("gather#{}", self.nodes.len());
        Ok(self.push(Op::GatherOneHot, vec![x, index], si, name))
    }

    /// Evaluates every node. Leaves must all be fed with tensors of the
    /// declared shape and finite values.
    pub fn forward<T: Scalar>(&self, feeds: &Feeds<'_, T>) -> Result<Values<T>> {
        let mut vals: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            let value = match node.op {
                Op::Leaf { .. } => {
                    let t = feeds.get(id).ok_or_else(|| Error::MissingFeed(self.label(id)))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::Shape {
                            node: self.label(id),
                            detail: format!("fed {:?}, declared {:?}", t.shape(), node.shape),
                        });
                    }
                    if !t.is_finite() {
                        return Err(Error::NonFinite(self.label(id)));
                    }
                    t.clone()
                }
                _ => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|x| &vals[x.0]).collect();
                    eval(node, &ins)?
                }
            };
            vals.push(value);
        }
        Ok(Values { vals })
    }

    /// Gradients of `loss` with respect to every `requires_grad` leaf.
    pub fn backward<T: Scalar>(&self, values: &Values<T>, loss: NodeId) -> Result<Gradients<T>> {
        let wrt = self.params();
        self.backward_wrt(values, loss, &wrt)
    }

    /// Gradients of `loss` with respect to the given leaves only; paths
    /// that cannot reach them are skipped.
    pub fn backward_wrt<T: Scalar>(
        &self,
        values: &Values<T>,
        loss: NodeId,
        wrt: &[NodeId],
    ) -> Result<Gradients<T>> {
        if values.get(loss).len() != 1 {
            return Err(Error::NotScalar(self.label(loss)));
        }
        let n = loss.0 + 1;
        let mut reaches = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                reaches[w.0] = true;
            }
        }
        for i in 0..n {
            if !reaches[i] {
                reaches[i] = self.nodes[i].inputs.iter().any(|x| reaches[x.0]);
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = HashMap::new();
        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf { .. } = node.op {
                if wrt.contains(&NodeId(i)) {
                    out.insert(NodeId(i), Tensor::new(&node.shape, gout)?);
                }
                continue;
            }
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|x| values.get(*x)).collect();
            let y = values.get(NodeId(i));
            for (k, &inp) in node.inputs.iter().enumerate() {
                if !reaches[inp.0] {
                    continue;
                }
                let acc = grads[inp.0].get_or_insert_with(|| vec![T::zero(); numel(&self.nodes[inp.0].shape)]);
                backprop_input(node, k, &ins, y, &gout, acc);
            }
        }
        for &w in wrt {
            out.entry(w)
                .or_insert_with(|| Tensor::zeros(&self.nodes[w.0].shape));
        }
        Ok(Gradients { map: out })
    }
}

fn conv_geom(sx: &[usize], sw: &[usize], stride: usize, padding: usize) -> ConvGeom {
    ConvGeom {
        in_channels: sx[1],
        height: sx[2],
        width: sx[3],
        out_channels: sw[0],
        kernel_h: sw[2],
        kernel_w: sw[3],
        stride,
        padding,
    }
}

fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Vec<T> {
    x.data().iter().map(|&v| f(v)).collect()
}

/// `[outer, axis, inner]` factorisation of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn eval<T: Scalar>(node: &Node, ins: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shape = &node.shape;
    let data = match node.op {
        Op::Leaf { .. } => unreachable!("leaves are fed"),
        Op::Add => ins[0].data().iter().zip(ins[1].data()).map(|(&a, &b)| a + b).collect(),
        Op::Mul => ins[0].data().iter().zip(ins[1].data()).map(|(&a, &b)| a * b).collect(),
        Op::ScalarMul(c) => {
            let c = T::of(c);
            map(ins[0], |v| v * c)
        }
        Op::MatMul => {
            let (m, k, n) = (ins[0].shape()[0], ins[0].shape()[1], ins[1].shape()[1]);
            let mut out = vec![T::zero(); m * n];
            kernels::gemm(m, k, n, T::one(), ins[0].data(), Layout::Normal, ins[1].data(), Layout::Normal, T::zero(), &mut out);
            out
        }
        Op::Conv2d { stride, padding } => {
            let g = conv_geom(ins[0].shape(), ins[1].shape(), stride, padding);
            let mut out = vec![T::zero(); numel(shape)];
            let bias = ins.get(2).map(|b| b.data());
            kernels::conv2d_forward(&g, shape[0], ins[0].data(), ins[1].data(), bias, &mut out);
            out
        }
        Op::UpsampleNearest { factor } => {
            let s = ins[0].shape();
            let mut out = vec![T::zero(); numel(shape)];
            kernels::upsample_nearest(s[0] * s[1], s[2], s[3], factor, ins[0].data(), &mut out);
            out
        }
        Op::LeakyRelu { slope } => {
            let s = T::of(slope);
            map(ins[0], |v| if v >= T::zero() { v } else { s * v })
        }
        Op::Relu => map(ins[0], |v| v.max(T::zero())),
        Op::Tanh => map(ins[0], |v| v.tanh()),
        Op::Sigmoid => map(ins[0], sigmoid),
        Op::Softmax => {
            let (outer, c, inner) = split_axis(shape, 1);
            let mut out = vec![T::zero(); numel(shape)];
            kernels::softmax_axis1(outer, c, inner, ins[0].data(), &mut out);
            out
        }
        Op::Log { lo, hi } => {
            let (lo, hi) = (T::of(lo), T::of(hi));
            map(ins[0], |v| v.max(lo).min(hi).ln())
        }
        Op::Square => map(ins[0], |v| v * v),
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (T::of(lo), T::of(hi));
            map(ins[0], |v| v.max(lo).min(hi))
        }
        Op::ReduceSum => vec![ins[0].data().iter().copied().sum()],
        Op::ReduceMean => {
            let n = T::of(ins[0].len() as f64);
            vec![ins[0].data().iter().copied().sum::<T>() / n]
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = split_axis(shape, axis);
            let mut out = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                for x in ins {
                    let chunk = x.shape()[axis] * inner;
                    out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            out
        }
        Op::GatherOneHot => {
            let (n, c, inner) = split_axis(ins[0].shape(), 1);
            let mut out = Vec::with_capacity(n * inner);
            for b in 0..n {
                for s in 0..inner {
                    let cls = class_index(ins[1].data()[b * inner + s], c, &node.name)?;
                    out.push(ins[0].data()[(b * c + cls) * inner + s]);
                }
            }
            out
        }
    };
    Tensor::new(shape, data)
}

fn class_index<T: Scalar>(v: T, classes: usize, node: &str) -> Result<usize> {
    let f = v.as_f64();
    if f < 0.0 || f.fract() != 0.0 || f as usize >= classes {
        return Err(Error::Shape {
            node: node.to_string(),
            detail: format!("class index {f} outside [0, {classes})"),
        });
    }
    Ok(f as usize)
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Accumulates d(loss)/d(input k) into `acc`, given d(loss)/d(output).
fn backprop_input<T: Scalar>(node: &Node, k: usize, ins: &[&Tensor<T>], y: &Tensor<T>, gout: &[T], acc: &mut [T]) {
    let x = ins[k].data();
    match node.op {
        Op::Leaf { .. } => {}
        Op::Add => acc.iter_mut().zip(gout).for_each(|(a, &g)| *a += g),
        Op::ScalarMul(c) => {
            let c = T::of(c);
            acc.iter_mut().zip(gout).for_each(|(a, &g)| *a += c * g);
        }
        Op::Mul => {
            let other = ins[1 - k].data();
            for ((a, &g), &o) in acc.iter_mut().zip(gout).zip(other) {
                *a += g * o;
            }
        }
        Op::MatMul => {
            let (m, kk, n) = (ins[0].shape()[0], ins[0].shape()[1], ins[1].shape()[1]);
            if k == 0 {
                kernels::gemm(m, n, kk, T::one(), gout, Layout::Normal, ins[1].data(), Layout::Transposed, T::one(), acc);
            } else {
                kernels::gemm(kk, m, n, T::one(), ins[0].data(), Layout::Transposed, gout, Layout::Normal, T::one(), acc);
            }
        }
        Op::Conv2d { stride, padding } => {
            let g = conv_geom(ins[0].shape(), ins[1].shape(), stride, padding);
            let batch = ins[0].shape()[0];
            match k {
                0 => kernels::conv2d_backward_input(&g, batch, ins[1].data(), gout, acc),
                1 => kernels::conv2d_backward_weight(&g, batch, ins[0].data(), gout, acc),
                _ => kernels::conv2d_backward_bias(&g, batch, gout, acc),
            }
        }
        Op::UpsampleNearest { factor } => {
            let s = ins[0].shape();
            kernels::upsample_nearest_backward(s[0] * s[1], s[2], s[3], factor, gout, acc);
        }
        Op::LeakyRelu { slope } => {
            let s = T::of(slope);
            for ((a, &g), &v) in acc.iter_mut().zip(gout).zip(x) {
                *a += if v >= T::zero() { g } else { s * g };
            }
        }
        Op::Relu => {
            for ((a, &g), &v) in acc.iter_mut().zip(gout).zip(x) {
                if v > T::zero() {
                    *a += g;
                }
            }
        }
        Op::Tanh => {
            for ((a, &g), &t) in acc.iter_mut().zip(gout).zip(y.data()) {
                *a += g * (T::one() - t * t);
            }
        }
        Op::Sigmoid => {
            for ((a, &g), &s) in acc.iter_mut().zip(gout).zip(y.data()) {
                *a += g * s * (T::one() - s);
            }
        }
        Op::Softmax => {
            let (outer, c, inner) = split_axis(&node.shape, 1);
            kernels::softmax_axis1_backward(outer, c, inner, y.data(), gout, acc);
        }
        Op::Log { lo, hi } => {
            let (lo, hi) = (T::of(lo), T::of(hi));
            for ((a, &g), &v) in acc.iter_mut().zip(gout).zip(x) {
                if v >= lo && v <= hi {
                    *a += g / v;
                }
            }
        }
        Op::Square => {
            let two = T::of(2.0);
            for ((a, &g), &v) in acc.iter_mut().zip(gout).zip(x) {
                *a += two * v * g;
            }
        }
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (T::of(lo), T::of(hi));
            for ((a, &g), &v) in acc.iter_mut().zip(gout).zip(x) {
                if v >= lo && v <= hi {
                    *a += g;
                }
            }
        }
        Op::ReduceSum => acc.iter_mut().for_each(|a| *a += gout[0]),
        Op::ReduceMean => {
            let g = gout[0] / T::of(acc.len() as f64);
            acc.iter_mut().for_each(|a| *a += g);
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = split_axis(&node.shape, axis);
            let total = node.shape[axis] * inner;
            let offset: usize = ins[..k].iter().map(|t| t.shape()[axis] * inner).sum();
            let chunk = ins[k].shape()[axis] * inner;
            for o in 0..outer {
                let src = &gout[o * total + offset..o * total + offset + chunk];
                acc[o * chunk..(o + 1) * chunk]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, &g)| *a += g);
            }
        }
        Op::GatherOneHot => {
            if k == 1 {
                return;
            }
            let (n, c, inner) = split_axis(ins[0].shape(), 1);
            for b in 0..n {
                for s in 0..inner {
                    // indices were validated in the forward pass
                    let cls = ins[1].data()[b * inner + s].as_f64() as usize;
                    acc[(b * c + cls) * inner + s] += gout[b * inner + s];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_by_identity() {
        let mut g = Graph::new();
        let a = g.input("a", &[2, 2]);
        let i = g.input("i", &[2, 2]);
        let y = g.matmul(a, i).unwrap();
        let (av, iv) = (t(&[2, 2], &[1., 2., 3., 4.]), t(&[2, 2], &[1., 0., 0., 1.]));
        let mut f = Feeds::new();
        f.insert(a, &av).insert(i, &iv);
        assert_eq!(g.forward(&f).unwrap().get(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.input("x", &[1, 3]);
        let y = g.softmax(x).unwrap();
        let xv = Tensor::<f64>::zeros(&[1, 3]);
        let mut f = Feeds::new();
        f.insert(x, &xv);
        for &p in g.forward(&f).unwrap().get(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_of_ones_is_window_sum() {
        let mut g = Graph::new();
        let x = g.input("x", &[1, 1, 3, 3]);
        let w = g.param("w", &[1, 1, 2, 2]);
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        let (xv, wv) = (Tensor::full(&[1, 1, 3, 3], 1.0), Tensor::full(&[1, 1, 2, 2], 1.0));
        let mut f = Feeds::new();
        f.insert(x, &xv).insert(w, &wv);
        assert_eq!(g.forward(&f).unwrap().get(y).data(), &[4.0; 4]);
    }

    #[test]
    fn square_gradient_is_analytic() {
        let mut g = Graph::new();
        let x = g.param("x", &[]);
        let y = g.square(x);
        let loss = g.sum(y);
        let xv = Tensor::scalar(3.0);
        let mut f = Feeds::new();
        f.insert(x, &xv);
        let vals = g.forward(&f).unwrap();
        let grads = g.backward(&vals, loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient_identity() {
        // d/dlogits of -sum(y * log softmax) = softmax - y
        let mut g = Graph::new();
        let z = g.param("z", &[1, 4, 1, 1]);
        let y = g.input("y", &[1, 4, 1, 1]);
        let p = g.softmax(z).unwrap();
        let lp = g.log(p);
        let prod = g.mul(y, lp).unwrap();
        let s = g.sum(prod);
        let loss = g.scale(s, -1.0);
        let zv = t(&[1, 4, 1, 1], &[0.3, -1.2, 2.0, 0.1]);
        let yv = t(&[1, 4, 1, 1], &[0., 0., 1., 0.]);
        let mut f = Feeds::new();
        f.insert(z, &zv).insert(y, &yv);
        let vals = g.forward(&f).unwrap();
        let grads = g.backward(&vals, loss).unwrap();
        let probs = vals.get(p).data();
        for (i, &gz) in grads.get(z).unwrap().data().iter().enumerate() {
            let expected = probs[i] - yv.data()[i];
            assert!((gz - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let a = g.input("alpha", &[2, 3]);
        let b = g.input("beta", &[3, 2]);
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("alpha") && msg.contains("beta"), "{msg}");
    }

    #[test]
    fn non_finite_feed_is_rejected() {
        let mut g = Graph::new();
        let a = g.input("a", &[2]);
        let _ = g.sum(a);
        let av = t(&[2], &[1.0, f64::NAN]);
        let mut f = Feeds::new();
        f.insert(a, &av);
        assert!(matches!(g.forward(&f), Err(Error::NonFinite(_))));
    }

    #[test]
    fn missing_feed_is_reported() {
        let mut g = Graph::new();
        let _ = g.input("a", &[2]);
        assert!(matches!(g.forward::<f64>(&Feeds::new()), Err(Error::MissingFeed(_))));
    }

    #[test]
    fn backward_needs_scalar_loss() {
        let mut g = Graph::new();
        let a = g.param("a", &[2]);
        let b = g.square(a);
        let av = t(&[2], &[1.0, 2.0]);
        let mut f = Feeds::new();
        f.insert(a, &av);
        let vals = g.forward(&f).unwrap();
        assert!(matches!(g.backward(&vals, b), Err(Error::NotScalar(_))));
    }

    #[test]
    fn gather_picks_indexed_class() {
        let mut g = Graph::new();
        let x = g.param("x", &[1, 3, 2]);
        let idx = g.input("idx", &[1, 2]);
        let y = g.gather_one_hot(x, idx).unwrap();
        let loss = g.sum(y);
        let xv = t(&[1, 3, 2], &[0., 1., 2., 3., 4., 5.]);
        let iv = t(&[1, 2], &[2., 0.]);
        let mut f = Feeds::new();
        f.insert(x, &xv).insert(idx, &iv);
        let vals = g.forward(&f).unwrap();
        assert_eq!(vals.get(y).data(), &[4., 1.]);
        let grads = g.backward(&vals, loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0., 1., 0., 0., 1., 0.]);
    }

    #[test]
    fn concat_roundtrips_gradient() {
        let mut g = Graph::new();
        let a = g.param("a", &[1, 1, 2]);
        let b = g.param("b", &[1, 2, 2]);
        let c = g.concat(&[a, b], 1).unwrap();
        let w = g.input("w", &[1, 3, 2]);
        let p = g.mul(c, w).unwrap();
        let loss = g.sum(p);
        let (av, bv) = (t(&[1, 1, 2], &[1., 2.]), t(&[1, 2, 2], &[3., 4., 5., 6.]));
        let wv = t(&[1, 3, 2], &[10., 20., 30., 40., 50., 60.]);
        let mut f = Feeds::new();
        f.insert(a, &av).insert(b, &bv).insert(w, &wv);
        let vals = g.forward(&f).unwrap();
        assert_eq!(vals.get(c).data(), &[1., 2., 3., 4., 5., 6.]);
        let grads = g.backward(&vals, loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[10., 20.]);
        assert_eq!(grads.get(b).unwrap().data(), &[30., 40., 50., 60.]);
    }
}
