//! Dense tensors and reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only Wengert tape: every operation evaluates
//! eagerly, records its inputs, and [`Graph::backward`] sweeps the tape in
//! reverse, accumulating gradients additively so fan-out (a node consumed by
//! several later ops) is handled by construction. All values are `f64`,
//! row-major, and at most rank 2; a rank-1 tensor of length `d` behaves as a
//! `1 x d` row wherever an operation needs a matrix view.

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::contract(format!(
                "tensors are rank 1 or 2, got shape {:?}",
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Matrix view: rank-1 tensors count as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Elementwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// `clamp(0.2 x + 0.5, 0, 1)`
    HardSigmoid,
    Logistic,
    Relu,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::HardSigmoid => (0.2 * x + 0.5).clamp(0.0, 1.0),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the input `x` and output `y`. Subgradient 0 at the
    /// relu and hard-sigmoid kinks.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::HardSigmoid => {
                if x > -2.5 && x < 2.5 {
                    0.2
                } else {
                    0.0
                }
            }
            Activation::Logistic => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Matrix plus a broadcast row (bias).
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Apply(NodeId, Activation),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SumAll(NodeId),
    WeightedBceMean {
        p: NodeId,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only computation tape. Node order is the topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// A leaf carried non-finite values, so downstream ops may too (disables
    /// the debug finiteness assertion, which covers finite inputs only).
    #[cfg(debug_assertions)]
    nonfinite_leaf: bool,
}

const BCE_EPS: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        #[cfg(debug_assertions)]
        {
            if matches!(op, Op::Leaf) {
                if !value.is_finite() {
                    self.nonfinite_leaf = true;
                }
            } else {
                debug_assert!(
                    self.nonfinite_leaf || value.is_finite(),
                    "non-finite value out of {:?} on finite inputs",
                    std::mem::discriminant(&op)
                );
            }
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    /// Gradient accumulated by the last `backward`, if any reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like the node value (zeros if untouched).
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let v = &self.nodes[id.0].value;
        let data = match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; v.numel()],
        };
        Tensor {
            shape: v.shape().to_vec(),
            data,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.cols() != bv.rows() {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        let ad = av.data();
        let bd = bv.data();
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rows() != bv.rows() || av.cols() != bv.cols() {
            return Err(Error::Shape {
                op: "add",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::matrix(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// `x + bias` where `bias` is a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (n, d) = (xv.rows(), xv.cols());
        let mut data = xv.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += bv.data()[j];
            }
        }
        let value = Tensor::matrix(n, d, data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddRow(x, bias), value, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rows() != bv.rows() || av.cols() != bv.cols() {
            return Err(Error::Shape {
                op: "mul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::matrix(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let value = Tensor {
            shape: av.shape().to_vec(),
            data: av.data().iter().map(|x| c * x).collect(),
        };
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn apply(&mut self, f: Activation, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|&v| f.eval(v)).collect(),
        };
        let rg = self.rg(x);
        self.push(Op::Apply(x, f), value, rg)
    }

    /// Featurewise concatenation: all inputs share a row count, columns stack
    /// in argument order.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let n = self.nodes[xs[0].0].value.rows();
        let mut total = 0;
        for &x in xs {
            let v = &self.nodes[x.0].value;
            if v.rows() != n {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.nodes[xs[0].0].value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            total += v.cols();
        }
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for &x in xs {
            let v = &self.nodes[x.0].value;
            let d = v.cols();
            for i in 0..n {
                data[i * total + off..i * total + off + d]
                    .copy_from_slice(&v.data()[i * d..(i + 1) * d]);
            }
            off += d;
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        let value = Tensor::matrix(n, total, data)?;
        Ok(self.push(Op::ConcatCols(xs.to_vec()), value, rg))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let (n, d) = (xv.rows(), xv.cols());
        if start + len > d || len == 0 {
            return Err(Error::contract(format!(
                "slice_cols [{start}, {}) out of 0..{d}",
                start + len
            )));
        }
        let mut data = vec![0.0; n * len];
        for i in 0..n {
            data[i * len..(i + 1) * len]
                .copy_from_slice(&xv.data()[i * d + start..i * d + start + len]);
        }
        let rg = self.rg(x);
        let value = Tensor::matrix(n, len, data)?;
        Ok(self.push(Op::SliceCols(x, start, len), value, rg))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::SumAll(x), Tensor::scalar(total), rg)
    }

    /// Mean class-weighted binary cross-entropy of a column of probabilities
    /// against 0/1 targets. Probabilities are clamped to `[1e-12, 1 - 1e-12]`;
    /// the clamped region contributes zero gradient.
    pub fn weighted_bce_mean(
        &mut self,
        p: NodeId,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<NodeId> {
        let pv = &self.nodes[p.0].value;
        if pv.cols() != 1 || pv.rows() != targets.len() || targets.len() != weights.len() {
            return Err(Error::contract(format!(
                "weighted_bce_mean: probabilities {:?} vs {} targets / {} weights",
                pv.shape(),
                targets.len(),
                weights.len()
            )));
        }
        let n = targets.len() as f64;
        let mut total = 0.0;
        for (i, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            let pt = pv.data()[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
            total += w * (-(y * pt.ln() + (1.0 - y) * (1.0 - pt).ln()));
        }
        let rg = self.rg(p);
        Ok(self.push(
            Op::WeightedBceMean {
                p,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(total / n),
            rg,
        ))
    }

    /// Batch normalization over the row (batch) axis with per-column affine
    /// parameters. Returns the normalized output; `batch_stats` exposes the
    /// per-column mean and biased variance of this invocation.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let (n, d) = (xv.rows(), xv.cols());
        if gv.cols() != d || bv.cols() != d || gv.rows() != 1 || bv.rows() != 1 {
            return Err(Error::Shape {
                op: "batch_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let nf = n as f64;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += xv.data()[i * d + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= nf;
        }
        for i in 0..n {
            for j in 0..d {
                let c = xv.data()[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in var.iter_mut() {
            *v /= nf;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (xv.data()[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let value = Tensor::matrix(n, d, out)?;
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            value,
            rg,
        ))
    }

    /// Per-column `(mean, biased variance)` computed by a `batch_norm` node.
    pub fn batch_stats(&self, bn: NodeId) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.nodes[bn.0].op {
            Op::BatchNorm { x, .. } => {
                let xv = &self.nodes[x.0].value;
                let (n, d) = (xv.rows(), xv.cols());
                let nf = n as f64;
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        mean[j] += xv.data()[i * d + j];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= nf;
                }
                for i in 0..n {
                    for j in 0..d {
                        let c = xv.data()[i * d + j] - mean[j];
                        var[j] += c * c;
                    }
                }
                for v in var.iter_mut() {
                    *v /= nf;
                }
                Some((mean, var))
            }
            _ => None,
        }
    }

    fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let numel = self.nodes[id.0].value.numel();
        let g = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += ci;
        }
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate on every
    /// node with `requires_grad`; fan-out sums by construction.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let up = self.nodes[idx].grad.take().unwrap();
            self.propagate(idx, &up);
            self.nodes[idx].grad = Some(up);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, up: &[f64]) {
        // Ops only reference earlier nodes, so reads of input values and
        // writes of input grads never alias `up`.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(a) {
                    let bd = bv.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            let urow = &up[i * n..(i + 1) * n];
                            let brow = &bd[p * n..(p + 1) * n];
                            for j in 0..n {
                                s += urow[j] * brow[j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.rg(b) {
                    let ad = self.nodes[a.0].value.data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let urow = &up[i * n..(i + 1) * n];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                drow[j] += aip * urow[j];
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, up);
                self.accumulate(b, up);
            }
            Op::AddRow(x, bias) => {
                let (x, bias) = (*x, *bias);
                self.accumulate(x, up);
                if self.rg(bias) {
                    let d = self.nodes[bias.0].value.cols();
                    let n = up.len() / d;
                    let mut db = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += up[i * d + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let contrib: Vec<f64> = up
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(u, v)| u * v)
                        .collect();
                    self.accumulate(a, &contrib);
                }
                if self.rg(b) {
                    let contrib: Vec<f64> = up
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(u, v)| u * v)
                        .collect();
                    self.accumulate(b, &contrib);
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                let contrib: Vec<f64> = up.iter().map(|u| u * c).collect();
                self.accumulate(a, &contrib);
            }
            Op::Apply(x, f) => {
                let (x, f) = (*x, *f);
                let contrib: Vec<f64> = up
                    .iter()
                    .zip(
                        self.nodes[x.0]
                            .value
                            .data()
                            .iter()
                            .zip(self.nodes[idx].value.data()),
                    )
                    .map(|(u, (&xi, &yi))| u * f.deriv(xi, yi))
                    .collect();
                self.accumulate(x, &contrib);
            }
            Op::ConcatCols(xs) => {
                let xs = xs.clone();
                let total = self.nodes[idx].value.cols();
                let n = self.nodes[idx].value.rows();
                let mut off = 0;
                for x in xs {
                    let d = self.nodes[x.0].value.cols();
                    if self.rg(x) {
                        let mut contrib = vec![0.0; n * d];
                        for i in 0..n {
                            contrib[i * d..(i + 1) * d]
                                .copy_from_slice(&up[i * total + off..i * total + off + d]);
                        }
                        self.accumulate(x, &contrib);
                    }
                    off += d;
                }
            }
            Op::SliceCols(x, start, len) => {
                let (x, start, len) = (*x, *start, *len);
                let d = self.nodes[x.0].value.cols();
                let n = self.nodes[x.0].value.rows();
                let mut contrib = vec![0.0; n * d];
                for i in 0..n {
                    contrib[i * d + start..i * d + start + len]
                        .copy_from_slice(&up[i * len..(i + 1) * len]);
                }
                self.accumulate(x, &contrib);
            }
            Op::SumAll(x) => {
                let x = *x;
                let contrib = vec![up[0]; self.nodes[x.0].value.numel()];
                self.accumulate(x, &contrib);
            }
            Op::WeightedBceMean {
                p,
                targets,
                weights,
            } => {
                let p = *p;
                let n = targets.len() as f64;
                let contrib: Vec<f64> = targets
                    .iter()
                    .zip(weights)
                    .zip(self.nodes[p.0].value.data())
                    .map(|((&y, &w), &pi)| {
                        if pi <= BCE_EPS || pi >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            up[0] * w / n * (-y / pi + (1.0 - y) / (1.0 - pi))
                        }
                    })
                    .collect();
                self.accumulate(p, &contrib);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let xhat = xhat.clone();
                let inv_std = inv_std.clone();
                let d = inv_std.len();
                let n = up.len() / d;
                let nf = n as f64;
                if self.rg(beta) {
                    let mut db = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += up[i * d + j];
                        }
                    }
                    self.accumulate(beta, &db);
                }
                if self.rg(gamma) {
                    let mut dg = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += up[i * d + j] * xhat[i * d + j];
                        }
                    }
                    self.accumulate(gamma, &dg);
                }
                if self.rg(x) {
                    let gv = self.nodes[gamma.0].value.data().to_vec();
                    let mut mean_dy = vec![0.0; d];
                    let mut mean_dy_xhat = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            mean_dy[j] += up[i * d + j];
                            mean_dy_xhat[j] += up[i * d + j] * xhat[i * d + j];
                        }
                    }
                    for j in 0..d {
                        mean_dy[j] /= nf;
                        mean_dy_xhat[j] /= nf;
                    }
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..d {
                            dx[i * d + j] = gv[j]
                                * inv_std[j]
                                * (up[i * d + j] - mean_dy[j] - xhat[i * d + j] * mean_dy_xhat[j]);
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
        }
    }
}
