//! Reverse-mode differentiation over an append-only tape of tensor ops.
//!
//! Values are computed eagerly as nodes are pushed, so every node's forward
//! value is cached by the time [`Graph::gradients`] walks the tape backwards.
//! A node's inputs always have smaller ids, which makes the tape a DAG in
//! topological order by construction.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `a[n,k] · b[k,m]`
    MatMul(NodeId, NodeId),
    /// `x[n,in] · w[out,in]ᵀ + bias[out]`
    Linear {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine {
        a: NodeId,
        scale: f64,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    Softmax(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    GaussianLogDensity {
        x: NodeId,
        mu: NodeId,
        sigma: NodeId,
    },
    Pick {
        a: NodeId,
        index: usize,
    },
    SliceCols {
        a: NodeId,
        start: usize,
        end: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Single-owner computation tape. Rebuild one per evaluation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros when the root does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// `c = op(a) · op(b)` (or `c +=` when `accumulate`), all row-major.
///
/// `op(a)` is `m×k`: stored `m×k`, or `k×m` when `a_t`. Likewise `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn row_softmax(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

/// Gradient buffer for `id`, allocated on first use; `None` for constants.
fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[id.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
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

    /// Leaf whose gradient is tracked (inputs under test, parameters).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, true)
    }

    /// Leaf treated as a constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Cached scalar value of `root`.
    pub fn forward(&self, root: NodeId) -> Result<f64> {
        self.check(root)?;
        self.value(root).item()
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::contract(format!("node {} not on this graph", id.0)))
        }
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, inputs: &[NodeId], value: Tensor) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push_raw(op, value, requires_grad)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).map(f);
        Ok(self.push(op, &[a], value))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, name)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::raw(va.shape().to_vec(), data);
        Ok(self.push(op, &[a, b], value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (va.dims2(), vb.dims2());
        if va.shape().len() != 2 || vb.shape().len() != 2 || k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, va.data(), false, vb.data(), false, &mut out, false);
        Ok(self.push(Op::MatMul(a, b), &[a, b], Tensor::raw(vec![n, m], out)))
    }

    /// Dense layer pre-activation: `x · wᵀ + bias` with `w` stored `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        self.check(bias)?;
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(bias));
        let (n, inp) = vx.dims2();
        let (out, inp2) = vw.dims2();
        if vw.shape().len() != 2 || inp != inp2 {
            return Err(Error::Shape {
                op: "linear",
                left: vx.shape().to_vec(),
                right: vw.shape().to_vec(),
            });
        }
        if vb.len() != out {
            return Err(Error::Shape {
                op: "linear bias",
                left: vw.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(n * out);
        for _ in 0..n {
            data.extend_from_slice(vb.data());
        }
        gemm(n, inp, out, vx.data(), false, vw.data(), true, &mut data, true);
        let value = Tensor::raw(vec![n, out], data);
        Ok(self.push(Op::Linear { x, w, bias }, &[x, w, bias], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.unary(a, Op::Affine { a, scale }, |v| scale * v + shift)
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        self.affine(a, scale, 0.0)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(Op::Sum(a), &[a], value))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let va = self.value(a);
        let (_, cols) = va.dims2();
        let value = Tensor::raw(va.shape().to_vec(), row_softmax(va.data(), cols));
        Ok(self.push(Op::Softmax(a), &[a], value))
    }

    /// Mean over rows of `logsumexp(row) - row[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let v = self.value(logits);
        let (rows, cols) = v.dims2();
        if labels.len() != rows {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: v.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::contract(format!("label {bad} out of range for {cols} classes")));
        }
        let mut total = 0.0;
        for (row, &label) in v.data().chunks(cols).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let value = Tensor::scalar(total / rows as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
        };
        Ok(self.push(op, &[logits], value))
    }

    /// Diagonal Gaussian log-density of each row of `x`, giving `[rows, 1]`.
    pub fn gaussian_log_density(&mut self, x: NodeId, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(mu)?;
        self.check(sigma)?;
        let (vx, vm, vs) = (self.value(x), self.value(mu), self.value(sigma));
        vx.same_shape(vm, "gaussian_log_density mean")?;
        vx.same_shape(vs, "gaussian_log_density sigma")?;
        let (rows, cols) = vx.dims2();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            let mut acc = 0.0;
            for ((&xi, &mi), &si) in vx.data()[span.clone()]
                .iter()
                .zip(&vm.data()[span.clone()])
                .zip(&vs.data()[span])
            {
                let d = (xi - mi) / si;
                acc -= HALF_LN_2PI + si.ln() + 0.5 * d * d;
            }
            out.push(acc);
        }
        let value = Tensor::raw(vec![rows, 1], out);
        Ok(self.push(Op::GaussianLogDensity { x, mu, sigma }, &[x, mu, sigma], value))
    }

    /// One element (by flat index) as a scalar node.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        self.check(a)?;
        let va = self.value(a);
        if index >= va.len() {
            return Err(Error::Shape {
                op: "pick",
                left: va.shape().to_vec(),
                right: vec![index],
            });
        }
        let value = Tensor::scalar(va.data()[index]);
        Ok(self.push(Op::Pick { a, index }, &[a], value))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.check(a)?;
        let va = self.value(a);
        let (rows, cols) = va.dims2();
        if start >= end || end > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                left: va.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for row in va.data().chunks(cols) {
            data.extend_from_slice(&row[start..end]);
        }
        let value = Tensor::raw(vec![rows, width], data);
        Ok(self.push(Op::SliceCols { a, start, end }, &[a], value))
    }

    /// `∂root/∂wrt`, shaped like `wrt`'s value.
    pub fn backward(&self, root: NodeId, wrt: NodeId) -> Result<Tensor> {
        self.check(wrt)?;
        Ok(self.gradients(root)?.take(wrt))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn gradients(&self, root: NodeId) -> Result<Gradients> {
        self.check(root)?;
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[id] = Some(upstream);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|g| Tensor::raw(self.nodes[i].value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let nodes = &self.nodes;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims2();
                let (_, m) = self.value(*b).dims2();
                if let Some(g) = slot(nodes, grads, *a) {
                    gemm(n, m, k, up, false, val(*b), true, g, true);
                }
                if let Some(g) = slot(nodes, grads, *b) {
                    gemm(k, n, m, val(*a), true, up, false, g, true);
                }
            }
            Op::Linear { x, w, bias } => {
                let (n, inp) = self.value(*x).dims2();
                let (out, _) = self.value(*w).dims2();
                if let Some(g) = slot(nodes, grads, *x) {
                    gemm(n, out, inp, up, false, val(*w), false, g, true);
                }
                if let Some(g) = slot(nodes, grads, *w) {
                    gemm(out, n, inp, up, true, val(*x), false, g, true);
                }
                if let Some(g) = slot(nodes, grads, *bias) {
                    for row in up.chunks(out) {
                        for (gi, &u) in g.iter_mut().zip(row) {
                            *gi += u;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (id, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(g) = slot(nodes, grads, id) {
                        g.iter_mut().zip(up).for_each(|(gi, &u)| *gi += sign * u);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (id, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(g) = slot(nodes, grads, id) {
                        g.iter_mut().zip(up).for_each(|(gi, &u)| *gi += sign * u);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &o) in g.iter_mut().zip(up).zip(val(*b)) {
                        *gi += u * o;
                    }
                }
                if let Some(g) = slot(nodes, grads, *b) {
                    for ((gi, &u), &o) in g.iter_mut().zip(up).zip(val(*a)) {
                        *gi += u * o;
                    }
                }
            }
            Op::Affine { a, scale } => {
                if let Some(g) = slot(nodes, grads, *a) {
                    g.iter_mut().zip(up).for_each(|(gi, &u)| *gi += scale * u);
                }
            }
            Op::Relu(a) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &v) in g.iter_mut().zip(up).zip(val(*a)) {
                        if v > 0.0 {
                            *gi += u;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &s) in g.iter_mut().zip(up).zip(out) {
                        *gi += u * s * (1.0 - s);
                    }
                }
            }
            Op::Exp(a) => {
                let out = node.value.data();
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &e) in g.iter_mut().zip(up).zip(out) {
                        *gi += u * e;
                    }
                }
            }
            Op::Log(a) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &v) in g.iter_mut().zip(up).zip(val(*a)) {
                        *gi += u / v;
                    }
                }
            }
            Op::Square(a) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &v) in g.iter_mut().zip(up).zip(val(*a)) {
                        *gi += 2.0 * u * v;
                    }
                }
            }
            Op::Softplus(a) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((gi, &u), &v) in g.iter_mut().zip(up).zip(val(*a)) {
                        *gi += u * sigmoid(v);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = slot(nodes, grads, *a) {
                    g.iter_mut().for_each(|gi| *gi += up[0]);
                }
            }
            Op::Softmax(a) => {
                let (_, cols) = node.value.dims2();
                let out = node.value.data();
                if let Some(g) = slot(nodes, grads, *a) {
                    for ((grow, urow), srow) in
                        g.chunks_mut(cols).zip(up.chunks(cols)).zip(out.chunks(cols))
                    {
                        let dot: f64 = urow.iter().zip(srow).map(|(u, s)| u * s).sum();
                        for ((gi, &u), &s) in grow.iter_mut().zip(urow).zip(srow) {
                            *gi += s * (u - dot);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let (rows, cols) = self.value(*logits).dims2();
                let probs = row_softmax(val(*logits), cols);
                let factor = up[0] / rows as f64;
                if let Some(g) = slot(nodes, grads, *logits) {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..cols {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            g[r * cols + c] += factor * (probs[r * cols + c] - onehot);
                        }
                    }
                }
            }
            Op::GaussianLogDensity { x, mu, sigma } => {
                let (_, cols) = self.value(*x).dims2();
                let (vx, vm, vs) = (val(*x), val(*mu), val(*sigma));
                let per = |i: usize| up[i / cols];
                if let Some(g) = slot(nodes, grads, *x) {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi -= per(i) * (vx[i] - vm[i]) / (vs[i] * vs[i]);
                    }
                }
                if let Some(g) = slot(nodes, grads, *mu) {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += per(i) * (vx[i] - vm[i]) / (vs[i] * vs[i]);
                    }
                }
                if let Some(g) = slot(nodes, grads, *sigma) {
                    for (i, gi) in g.iter_mut().enumerate() {
                        let d = vx[i] - vm[i];
                        let s = vs[i];
                        *gi += per(i) * (d * d / (s * s * s) - 1.0 / s);
                    }
                }
            }
            Op::Pick { a, index } => {
                if let Some(g) = slot(nodes, grads, *a) {
                    g[*index] += up[0];
                }
            }
            Op::SliceCols { a, start, end } => {
                let (_, cols) = self.value(*a).dims2();
                let width = end - start;
                if let Some(g) = slot(nodes, grads, *a) {
                    for (grow, urow) in g.chunks_mut(cols).zip(up.chunks(width)) {
                        for (gi, &u) in grow[*start..*end].iter_mut().zip(urow) {
                            *gi += u;
                        }
                    }
                }
            }
        }
    }
}

/// Log-density of a standard univariate normal at `x`, for closed-form checks.
pub fn standard_normal_log_density(x: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - 0.5 * x * x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_var(g: &mut Graph, v: f64) -> NodeId {
        g.variable(Tensor::scalar(v))
    }

    #[test]
    fn arithmetic_forward() {
        let mut g = Graph::new();
        let two = g.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let three = g.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap());
        let prod = g.matmul(two, three).unwrap();
        let one = g.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let out = g.add(prod, one).unwrap();
        assert_eq!(g.forward(out).unwrap(), 7.0);
    }

    #[test]
    fn relu_forward_and_kink() {
        let mut g = Graph::new();
        let x = scalar_var(&mut g, -5.0);
        let r = g.relu(x).unwrap();
        assert_eq!(g.forward(r).unwrap(), 0.0);

        let mut g = Graph::new();
        let x = scalar_var(&mut g, -1.0);
        let r = g.relu(x).unwrap();
        assert_eq!(g.backward(r, x).unwrap().item().unwrap(), 0.0);

        let mut g = Graph::new();
        let x = scalar_var(&mut g, 0.0);
        let r = g.relu(x).unwrap();
        assert_eq!(g.backward(r, x).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn gaussian_log_density_standard() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let mu = g.constant(Tensor::scalar(0.0));
        let sigma = g.constant(Tensor::scalar(1.0));
        let ld = g.gaussian_log_density(x, mu, sigma).unwrap();
        let expected = standard_normal_log_density(0.0);
        assert!((g.forward(ld).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn square_power_rule() {
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 3.0);
        let y = g.square(x).unwrap();
        assert_eq!(g.backward(y, x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, c), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(a, a), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = scalar_var(&mut g, 3.0);
        let y = g.mul(c, x).unwrap();
        let grads = g.gradients(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(c).item().unwrap(), 0.0);
        assert_eq!(grads.wrt(x).item().unwrap(), 2.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x * x + x  ->  dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 1.5);
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        assert_eq!(g.backward(y, x).unwrap().item().unwrap(), 4.0);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut g = Graph::new();
        let z = g.variable(Tensor::matrix(1, 3, vec![1000.0, 1000.0, 1000.0]).unwrap());
        let s = g.softmax(z).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
