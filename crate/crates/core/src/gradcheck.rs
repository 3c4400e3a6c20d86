//! Central finite differences, used as the independent gradient oracle.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference estimate of `∇f(x)`, one coordinate at a time.
pub fn finite_difference_gradient<F>(mut objective: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = objective(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = objective(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(Tensor::raw(x.shape().to_vec(), grad))
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Operation families exercised by [`random_case_error`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Linear,
    Add,
    Sub,
    Mul,
    Affine,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Square,
    Softplus,
    Sum,
    Softmax,
    SoftmaxCrossEntropy,
    GaussianLogDensity,
    Pick,
    SliceCols,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::MatMul,
        OpKind::Linear,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Affine,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Square,
        OpKind::Softplus,
        OpKind::Sum,
        OpKind::Softmax,
        OpKind::SoftmaxCrossEntropy,
        OpKind::GaussianLogDensity,
        OpKind::Pick,
        OpKind::SliceCols,
    ];
}

/// Random network-shaped composite around one op: `x → linear → op → weighted sum`.
struct Case {
    kind: OpKind,
    x: Tensor,
    w: Tensor,
    b: Tensor,
    /// Extra parameters for ops with a second operand or a second stage.
    aux: Vec<Tensor>,
    labels: Vec<usize>,
    index: (usize, usize),
    readout: Vec<f64>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::raw(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

impl Case {
    fn random<R: Rng + ?Sized>(kind: OpKind, rng: &mut R) -> Self {
        let rows = rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        let h = rng.random_range(2..=4);
        let aux = match kind {
            OpKind::MatMul => vec![uniform(rng, &[h, 3])],
            OpKind::Linear => vec![uniform(rng, &[2, h]), uniform(rng, &[2])],
            OpKind::Add | OpKind::Sub | OpKind::Mul => vec![uniform(rng, &[h, d]), uniform(rng, &[h])],
            OpKind::GaussianLogDensity => vec![
                uniform(rng, &[h, d]),
                uniform(rng, &[h]),
                uniform(rng, &[h, d]),
                uniform(rng, &[h]),
            ],
            _ => Vec::new(),
        };
        let start = rng.random_range(0..h - 1);
        let end = rng.random_range(start + 1..=h);
        let index = match kind {
            OpKind::Pick => (rng.random_range(0..rows * h), 0),
            OpKind::SliceCols => (start, end),
            _ => (0, 0),
        };
        Case {
            kind,
            x: uniform(rng, &[rows, d]),
            w: uniform(rng, &[h, d]),
            b: uniform(rng, &[h]),
            aux,
            labels: (0..rows).map(|_| rng.random_range(0..h)).collect(),
            index,
            readout: (0..rows * h.max(3)).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Builds the scalar objective with `x` and `w` as variables.
    fn build(&self, g: &mut Graph, x: &Tensor, w: &Tensor) -> Result<(NodeId, NodeId, NodeId)> {
        let xn = g.variable(x.clone());
        let wn = g.variable(w.clone());
        let bn = g.constant(self.b.clone());
        let a = g.linear(xn, wn, bn)?;
        let second = |g: &mut Graph, i: usize| -> Result<NodeId> {
            let w2 = g.constant(self.aux[i].clone());
            let b2 = g.constant(self.aux[i + 1].clone());
            g.linear(xn, w2, b2)
        };
        let out = match self.kind {
            OpKind::MatMul => {
                let m = g.constant(self.aux[0].clone());
                g.matmul(a, m)?
            }
            OpKind::Linear => {
                let w2 = g.constant(self.aux[0].clone());
                let b2 = g.constant(self.aux[1].clone());
                g.linear(a, w2, b2)?
            }
            OpKind::Add => {
                let o = second(g, 0)?;
                g.add(a, o)?
            }
            OpKind::Sub => {
                let o = second(g, 0)?;
                g.sub(a, o)?
            }
            OpKind::Mul => {
                let o = second(g, 0)?;
                g.mul(a, o)?
            }
            OpKind::Affine => g.affine(a, -1.7, 0.3)?,
            OpKind::Relu => g.relu(a)?,
            OpKind::Sigmoid => g.sigmoid(a)?,
            OpKind::Exp => g.exp(a)?,
            OpKind::Log => {
                let sq = g.square(a)?;
                let pos = g.affine(sq, 1.0, 0.1)?;
                g.log(pos)?
            }
            OpKind::Square => g.square(a)?,
            OpKind::Softplus => g.softplus(a)?,
            OpKind::Sum => g.sum(a)?,
            OpKind::Softmax => g.softmax(a)?,
            OpKind::SoftmaxCrossEntropy => g.softmax_cross_entropy(a, &self.labels)?,
            OpKind::GaussianLogDensity => {
                let mu = second(g, 0)?;
                let raw = second(g, 2)?;
                let soft = g.softplus(raw)?;
                let sigma = g.affine(soft, 1.0, 0.5)?;
                g.gaussian_log_density(a, mu, sigma)?
            }
            OpKind::Pick => g.pick(a, self.index.0)?,
            OpKind::SliceCols => g.slice_cols(a, self.index.0, self.index.1)?,
        };
        let v = g.value(out);
        let root = if v.is_scalar() {
            out
        } else {
            let r = Tensor::raw(v.shape().to_vec(), self.readout[..v.len()].to_vec());
            let r = g.constant(r);
            let weighted = g.mul(out, r)?;
            g.sum(weighted)?
        };
        Ok((root, xn, wn))
    }

    /// Relu is not differentiable at 0; such draws are rejected.
    fn near_kink(&self) -> Result<bool> {
        if self.kind != OpKind::Relu {
            return Ok(false);
        }
        let (rows, d) = self.x.dims2();
        let h = self.b.len();
        for r in 0..rows {
            for j in 0..h {
                let pre: f64 = (0..d).map(|k| self.x.data()[r * d + k] * self.w.data()[j * d + k]).sum::<f64>()
                    + self.b.data()[j];
                if pre.abs() < 1e-3 {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

/// Largest relative error between backward and central differences (h = 1e-5)
/// over the input and first-layer weights of a random case built around `kind`.
pub fn random_case_error<R: Rng + ?Sized>(kind: OpKind, rng: &mut R) -> Result<f64> {
    let case = loop {
        let c = Case::random(kind, rng);
        if !c.near_kink()? {
            break c;
        }
    };
    let mut g = Graph::new();
    let (root, xn, wn) = case.build(&mut g, &case.x, &case.w)?;
    let grads = g.gradients(root)?;
    let (gx, gw) = (grads.wrt(xn), grads.wrt(wn));
    let eval = |x: &Tensor, w: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let (root, _, _) = case.build(&mut g, x, w)?;
        g.forward(root)
    };
    let fx = finite_difference_gradient(|x| eval(x, &case.w), &case.x, 1e-5)?;
    let fw = finite_difference_gradient(|w| eval(&case.x, w), &case.w, 1e-5)?;
    Ok(max_relative_error(&gx, &fx, GRADIENT_FLOOR).max(max_relative_error(&gw, &fw, GRADIENT_FLOOR)))
}

/// Denominator floor for relative errors, so near-zero gradients compare absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-4;
