//! Define-by-run tape for reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a [`Node`] whose parents already live on the tape, so
//! creation order is a topological order and [`Tape::backward`] is a single
//! reverse sweep.

use super::tensor::{matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Scale constant of the self-normalizing activation.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// Negative-branch saturation constant of the self-normalizing activation.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Elementwise sum; the right operand may be a `1 x cols` row broadcast over rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Selu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRow(NodeId),
    LogSoftmaxRow(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    ConcatRows(Vec<NodeId>),
    Transpose(NodeId),
    Pick(NodeId, usize, usize),
    Cosine(NodeId, NodeId),
    GradReverse(NodeId, f64),
    StopGrad(NodeId),
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Cosine(a, b) => vec![*a, *b],
            Scale(a, _) | GradReverse(a, _) | Pick(a, _, _) => vec![*a],
            Tanh(a) | Selu(a) | Sigmoid(a) | SoftmaxRow(a) | LogSoftmaxRow(a) | Log(a)
            | Exp(a) | Mean(a) | Sum(a) | Transpose(a) | StopGrad(a) => vec![*a],
            ConcatRows(parts) => parts.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            MatMul(..) => "matmul",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Tanh(..) => "tanh",
            Selu(..) => "selu",
            Sigmoid(..) => "sigmoid",
            SoftmaxRow(..) => "softmax-row",
            LogSoftmaxRow(..) => "log-softmax-row",
            Log(..) => "log",
            Exp(..) => "exp",
            Mean(..) => "mean",
            Sum(..) => "sum",
            ConcatRows(..) => "concat-rows",
            Transpose(..) => "transpose",
            Pick(..) => "pick",
            Cosine(..) => "cosine",
            GradReverse(..) => "grad-reverse",
            StopGrad(..) => "stop-grad",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    pub grad: Tensor,
    /// False for constants and for everything computed only from them
    /// (including the output of `stop_grad`).
    pub requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.values_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf | Op::StopGrad(_) => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.push_with(op, value, requires_grad)
    }

    fn push_with(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        let (r, c) = value.shape();
        self.nodes.push(Node {
            op,
            value,
            grad: Tensor::zeros(r, c),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_with(Op::Leaf, value, true)
    }

    /// A leaf that never receives gradient (inputs, frozen tensors).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_with(Op::Leaf, value, false)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let va = self.value(a);
        let vb = self.value(b);
        let v = if sa == sb {
            Tensor::from_fn(sa.0, sa.1, |r, c| va.get(r, c) + vb.get(r, c))
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Tensor::from_fn(sa.0, sa.1, |r, c| va.get(r, c) + vb.get(0, c))
        } else {
            return Err(Error::Shape {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        };
        Ok(self.push(Op::Add(a, b), v))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let v = Tensor::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) - vb.get(r, c));
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let v = Tensor::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) * vb.get(r, c));
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn selu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(selu);
        self.push(Op::Selu(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softmax_row(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::contract("softmax_row needs at least one column"));
        }
        let mut v = x.clone();
        for r in 0..x.rows() {
            let row = &mut v.values_mut()[r * x.cols()..(r + 1) * x.cols()];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            row.iter_mut().for_each(|e| *e /= s);
        }
        Ok(self.push(Op::SoftmaxRow(a), v))
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax_row(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::contract("log_softmax_row needs at least one column"));
        }
        let mut v = x.clone();
        for r in 0..x.rows() {
            let row = &mut v.values_mut()[r * x.cols()..(r + 1) * x.cols()];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|e| *e -= lse);
        }
        Ok(self.push(Op::LogSoftmaxRow(a), v))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if let Some(bad) = x.values().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Numeric(format!("log of non-positive value {bad}")));
        }
        let v = x.map(f64::ln);
        Ok(self.push(Op::Log(a), v))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        if !v.is_finite() {
            return Err(Error::Numeric("exp overflow".into()));
        }
        Ok(self.push(Op::Exp(a), v))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        Ok(self.push(Op::Mean(a), v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// The single entry `(row, col)` as a 1x1 node.
    pub fn pick(&mut self, a: NodeId, row: usize, col: usize) -> Result<NodeId> {
        let x = self.value(a);
        if row >= x.rows() || col >= x.cols() {
            return Err(Error::contract(format!(
                "pick ({row},{col}) out of range for {:?}",
                x.shape()
            )));
        }
        let v = Tensor::scalar(x.get(row, col));
        Ok(self.push(Op::Pick(a, row, col), v))
    }

    /// Cosine similarity of two equally shaped tensors viewed as flat vectors.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("cosine", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = (va.norm(), vb.norm());
        if na == 0.0 {
            return Err(Error::Numeric("cosine: first argument has zero norm".into()));
        }
        if nb == 0.0 {
            return Err(Error::Numeric("cosine: second argument has zero norm".into()));
        }
        let c = (va.dot(vb) / (na * nb)).clamp(-1.0, 1.0);
        Ok(self.push(Op::Cosine(a, b), Tensor::scalar(c)))
    }

    /// Identity forward; backward scales the incoming gradient by `-weight`.
    pub fn grad_reverse(&mut self, a: NodeId, weight: f64) -> Result<NodeId> {
        if !(weight >= 0.0) {
            return Err(Error::contract(format!(
                "grad_reverse weight must be >= 0, got {weight}"
            )));
        }
        let v = self.value(a).clone();
        Ok(self.push(Op::GradReverse(a, weight), v))
    }

    /// Identity forward; no gradient flows back to `a`.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(Op::StopGrad(a), v)
    }

    /// Accumulates `d root / d node` into every node's `grad`.
    ///
    /// Gradients are added to whatever is already stored, so calling this
    /// twice without [`Tape::zero_grad`] doubles every gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::contract(format!(
                "backward root must be 1x1, got {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            self.nodes[i].grad.add_assign(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let wants = |p: NodeId| self.nodes[p.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, matmul_nt(g, self.value(*b)));
                }
                if wants(*b) {
                    accumulate(adj, *b, matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*b) {
                    let sb = self.shape(*b);
                    if sb == g.shape() {
                        accumulate(adj, *b, g.clone());
                    } else {
                        let mut col = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (c, v) in g.row(r).iter().enumerate() {
                                col.values_mut()[c] += v;
                            }
                        }
                        accumulate(adj, *b, col);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(adj, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    accumulate(adj, *a, zip_map(g, vb, |g, y| g * y));
                }
                if wants(*b) {
                    accumulate(adj, *b, zip_map(g, va, |g, x| g * x));
                }
            }
            Op::Scale(a, f) => accumulate(adj, *a, g.map(|v| v * f)),
            Op::Tanh(a) => accumulate(adj, *a, zip_map(g, &node.value, |g, y| g * (1.0 - y * y))),
            Op::Selu(a) => {
                let x = self.value(*a);
                accumulate(
                    adj,
                    *a,
                    zip_map(g, x, |g, x| {
                        if x > 0.0 {
                            g * SELU_LAMBDA
                        } else {
                            g * SELU_LAMBDA * SELU_ALPHA * x.exp()
                        }
                    }),
                )
            }
            Op::Sigmoid(a) => {
                accumulate(adj, *a, zip_map(g, &node.value, |g, y| g * y * (1.0 - y)))
            }
            Op::SoftmaxRow(a) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, yr[c] * (gr[c] - s));
                    }
                }
                accumulate(adj, *a, dx)
            }
            Op::LogSoftmaxRow(a) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s: f64 = gr.iter().sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, gr[c] - yr[c].exp() * s);
                    }
                }
                accumulate(adj, *a, dx)
            }
            Op::Log(a) => accumulate(adj, *a, zip_map(g, self.value(*a), |g, x| g / x)),
            Op::Exp(a) => accumulate(adj, *a, zip_map(g, &node.value, |g, y| g * y)),
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                accumulate(adj, *a, Tensor::full(r, c, g.item() / (r * c) as f64))
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                accumulate(adj, *a, Tensor::full(r, c, g.item()))
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.shape(*p).0;
                    if wants(*p) {
                        accumulate(adj, *p, g.slice_rows(start, start + rows));
                    }
                    start += rows;
                }
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::Pick(a, r, c) => {
                let (rows, cols) = self.shape(*a);
                let mut dx = Tensor::zeros(rows, cols);
                dx.set(*r, *c, g.item());
                accumulate(adj, *a, dx)
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (va.norm(), vb.norm());
                let cos = node.value.item();
                let gs = g.item();
                if wants(*a) {
                    accumulate(
                        adj,
                        *a,
                        zip_map(va, vb, |x, y| gs * (y / (na * nb) - cos * x / (na * na))),
                    );
                }
                if wants(*b) {
                    accumulate(
                        adj,
                        *b,
                        zip_map(vb, va, |y, x| gs * (x / (na * nb) - cos * y / (nb * nb))),
                    );
                }
            }
            Op::GradReverse(a, w) => accumulate(adj, *a, g.map(|v| -w * v)),
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.values().iter().zip(b.values()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip_map shapes agree")
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}
