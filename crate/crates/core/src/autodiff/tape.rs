//! The recording tape and reverse accumulation.

use std::sync::Arc;

use super::conv::{self, ConvShape};
use super::tensor::{complex_to_planar, planar_to_complex, Tensor};
use crate::encoding::EncodingOperator;
use crate::error::{Error, Result};
use crate::fft;
use crate::pi::{self, CgConfig};

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A real-linear map with an explicit adjoint, usable as a graph node.
pub trait LinearOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn input_len(&self) -> usize;
    fn output_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// Adjoint with respect to the Euclidean inner product on both sides.
    fn adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Solver settings for a data-fidelity node.
#[derive(Clone, Debug)]
pub struct DataFidelity {
    pub encoding: EncodingOperator,
    pub forward_cg: CgConfig,
    /// The backward solve must reach its tolerance, otherwise the gradient is rejected.
    pub backward_cg: CgConfig,
}

/// The penalty weight of a data-fidelity node: fixed, or a traced scalar.
#[derive(Clone, Copy, Debug)]
pub enum Penalty {
    Fixed(f64),
    Traced(Var),
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a + s·b`
    AddScaled(Var, Var, f64),
    Abs(Var, f64),
    Relu(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        shape: ConvShape,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    NormL1(Var),
    NormL2(Var),
    Fft2 {
        x: Var,
        inverse: bool,
    },
    ComplexAbs(Var),
    Linear(Var, Arc<dyn LinearOp>),
    DataFidelity {
        z: Var,
        rhs: Var,
        mu: Penalty,
        solver: Arc<DataFidelity>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScaled(..) => "add_scaled",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Conv2d { .. } => "conv2d",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Max(..) => "max",
            Op::NormL1(..) => "norm_l1",
            Op::NormL2(..) => "norm_l2",
            Op::Fft2 { .. } => "fft2",
            Op::ComplexAbs(..) => "complex_abs",
            Op::Linear(_, op) => op.name(),
            Op::DataFidelity { .. } => "data_fidelity",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A Wengert list: values are appended in evaluation order, so reverse index
/// order is a valid reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every traced value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient, or zeros if the value did not influence the loss.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn complex_image_shape(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [2, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(op, &[2, 0, 0], s)),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op.name(), ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect());
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), |x| s * x)
    }

    /// `a + s·b`.
    pub fn add_scaled(&mut self, a: Var, b: Var, s: f64) -> Result<Var> {
        self.zip(a, b, Op::AddScaled(a, b, s), |x, y| x + s * y)
    }

    /// `sqrt(x² + eps²)`; `eps = 0` gives `|x|` with subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.map(a, Op::Abs(a, eps), |x| if eps == 0.0 { x.abs() } else { x.hypot(eps) })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Stride-1 convolution preserving spatial size: `x [Cin,H,W]`, `w [Cout,Cin,k,k]`, `b [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (cin, h, wd) = match xs {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape("conv2d", &[0, 0, 0], s)),
        };
        let (cout, k) = match ws {
            [o, i, k1, k2] if *i == cin && k1 == k2 && k1 % 2 == 1 => (*o, *k1),
            s => return Err(Error::shape("conv2d", xs, s)),
        };
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv2d", &[cout], self.shape(b)));
            }
        }
        let shape = ConvShape {
            cin,
            cout,
            height: h,
            width: wd,
            k,
        };
        let out = conv::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &shape,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_parts(vec![cout, h, wd], out), Op::Conv2d { x, w, b, shape }, rg)
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), rg)
    }

    /// `x[start..start + len]` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(Error::shape("slice", &s, &[start, len]));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, data), Op::Slice { x, start }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Mean(x), rg)
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        let (idx, v) = self
            .value(x)
            .data()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Max(x, idx), rg)
    }

    pub fn norm_l1(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).data().iter().map(|v| v.abs()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::NormL1(x), rg)
    }

    pub fn norm_l2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::NormL2(x), rg)
    }

    /// Centered orthonormal 2-D FFT of a `[2, H, W]` complex tensor.
    pub fn fft2(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let (h, w) = complex_image_shape("fft2", self.value(x))?;
        let mut buf = planar_to_complex(self.value(x).data());
        let plan = fft::plan(h, w);
        if inverse {
            plan.inverse(&mut buf);
        } else {
            plan.forward(&mut buf);
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_parts(vec![2, h, w], complex_to_planar(&buf)),
            Op::Fft2 { x, inverse },
            rg,
        )
    }

    /// Pointwise modulus of a planar complex tensor `[2, ...]` → `[...]`,
    /// smoothed as `sqrt(re² + im² + eps²)` when `eps > 0`.
    pub fn complex_abs(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[0] != 2 {
            return Err(Error::shape("complex_abs", &[2, 0], &s));
        }
        let t = self.value(x).data();
        let n = t.len() / 2;
        let data = (0..n)
            .map(|i| (t[i] * t[i] + t[n + i] * t[n + i] + eps * eps).sqrt())
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(s[1..].to_vec(), data), Op::ComplexAbs(x), rg)
    }

    pub fn linear(&mut self, x: Var, op: Arc<dyn LinearOp>) -> Result<Var> {
        if self.value(x).len() != op.input_len() {
            return Err(Error::shape(op.name(), &[op.input_len()], self.shape(x)));
        }
        let out = op.apply(self.value(x).data());
        let rg = self.rg(x);
        self.push(Tensor::from_parts(op.output_shape(), out), Op::Linear(x, op), rg)
    }

    /// `(E^H E + μ I)^{-1}(rhs + μ z)` on `[2, H, W]` tensors.
    pub fn data_fidelity(&mut self, z: Var, rhs: Var, mu: Penalty, solver: Arc<DataFidelity>) -> Result<Var> {
        let e = &solver.encoding;
        let dims = [2, e.height(), e.width()];
        if self.shape(z) != dims || self.shape(rhs) != dims {
            return Err(Error::shape("data_fidelity", self.shape(z), self.shape(rhs)));
        }
        let mu_value = self.penalty_value(mu)?;
        let zc = planar_to_complex(self.value(z).data());
        let rc = planar_to_complex(self.value(rhs).data());
        let (x, _) = pi::df_solve_slice(&zc, &rc, e, mu_value, &solver.forward_cg)?;
        let rg = self.rg(z) || self.rg(rhs) || matches!(mu, Penalty::Traced(m) if self.rg(m));
        self.push(
            Tensor::from_parts(dims.to_vec(), complex_to_planar(&x)),
            Op::DataFidelity { z, rhs, mu, solver },
            rg,
        )
    }

    fn penalty_value(&self, mu: Penalty) -> Result<f64> {
        let v = match mu {
            Penalty::Fixed(v) => v,
            Penalty::Traced(m) => {
                let t = self.value(m);
                if !t.is_scalar() {
                    return Err(Error::NotScalar(t.shape().to_vec()));
                }
                t.item()
            }
        };
        if !(v > 0.0) {
            return Err(Error::invalid(format!("penalty weight must be > 0, got {v}")));
        }
        Ok(v)
    }

    /// Reverse accumulation from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lt.shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(node, &g, &mut grads)?;
            if !matches!(node.op, Op::Leaf) {
                // intermediate gradients are not part of the result
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), g)),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, gd.iter().map(|v| v * s).collect()),
            Op::AddScaled(a, b, s) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|v| v * s).collect());
            }
            Op::Abs(a, eps) => {
                let out = node.value.data();
                let gx = gd
                    .iter()
                    .zip(val(*a))
                    .zip(out)
                    .map(|((g, x), y)| if *y == 0.0 { 0.0 } else if *eps == 0.0 { g * x.signum() } else { g * x / y })
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Relu(a) => {
                let gx = gd.iter().zip(val(*a)).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Conv2d { x, w, b, shape } => {
                let (gx, gw, gb) =
                    conv::conv2d_backward(val(*x), val(*w), gd, shape, self.rg(*x), self.rg(*w));
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(grads, *p, gd[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let xs = self.shape(*x);
                let inner: usize = xs[1..].iter().product();
                let mut gx = vec![0.0; self.value(*x).len()];
                gx[start * inner..start * inner + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => self.accumulate(grads, *x, vec![gd[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0] / n as f64; n]);
            }
            Op::Max(x, idx) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                gx[*idx] = gd[0];
                self.accumulate(grads, *x, gx);
            }
            Op::NormL1(x) => {
                let gx = val(*x)
                    .iter()
                    .map(|v| if *v == 0.0 { 0.0 } else { gd[0] * v.signum() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::NormL2(x) => {
                let n = node.value.item();
                let gx = if n == 0.0 {
                    vec![0.0; self.value(*x).len()]
                } else {
                    val(*x).iter().map(|v| gd[0] * v / n).collect()
                };
                self.accumulate(grads, *x, gx);
            }
            Op::Fft2 { x, inverse } => {
                let (h, w) = complex_image_shape("fft2", self.value(*x))?;
                let mut buf = planar_to_complex(gd);
                let plan = fft::plan(h, w);
                // unitary: the adjoint is the opposite transform
                if *inverse {
                    plan.forward(&mut buf);
                } else {
                    plan.inverse(&mut buf);
                }
                self.accumulate(grads, *x, complex_to_planar(&buf));
            }
            Op::ComplexAbs(x) => {
                let t = val(*x);
                let out = node.value.data();
                let n = out.len();
                let mut gx = vec![0.0; 2 * n];
                for i in 0..n {
                    if out[i] > 0.0 {
                        gx[i] = gd[i] * t[i] / out[i];
                        gx[n + i] = gd[i] * t[n + i] / out[i];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Linear(x, op) => self.accumulate(grads, *x, op.adjoint(gd)),
            Op::DataFidelity { z, rhs, mu, solver } => {
                let mu_value = self.penalty_value(*mu)?;
                let gc = planar_to_complex(gd);
                let (w, status) = pi::shifted_inverse(&solver.encoding, mu_value, &gc, &solver.backward_cg)?;
                status.require_converged()?;
                let wp = complex_to_planar(&w);
                if self.rg(*z) {
                    self.accumulate(grads, *z, wp.iter().map(|v| v * mu_value).collect());
                }
                if self.rg(*rhs) {
                    self.accumulate(grads, *rhs, wp.clone());
                }
                if let Penalty::Traced(m) = mu {
                    if self.rg(*m) {
                        let gm: f64 = wp
                            .iter()
                            .zip(val(*z))
                            .zip(node.value.data())
                            .map(|((w, z), x)| w * (z - x))
                            .sum();
                        self.accumulate(grads, *m, vec![gm]);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `μ (E^H E + μ I)^{-1} g`: the adjoint Jacobian of a data-fidelity block with
/// respect to its regularizer input.
pub fn cg_fidelity_jvp(
    e: &EncodingOperator,
    mu: f64,
    cotangent: &crate::image::ComplexImage,
    cfg: &CgConfig,
) -> Result<crate::image::ComplexImage> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("penalty weight must be > 0, got {mu}")));
    }
    let (w, status) = pi::shifted_inverse(e, mu, cotangent.data(), cfg)?;
    status.require_converged()?;
    crate::image::ComplexImage::new(
        cotangent.height(),
        cotangent.width(),
        w.into_iter().map(|v| v * mu).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_coils, make_mask, MaskKind};

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662 + seed as f64 * 0.31).sin()).collect()
    }

    /// Compares the tape gradient of `f` at `inputs` with central differences.
    fn check_grad(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, tol: f64) {
        let eval = |xs: &[Tensor]| -> f64 {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone()).unwrap()).collect();
            let l = f(&mut t, &vs).unwrap();
            t.value(l).item()
        };
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone()).unwrap()).collect();
        let l = f(&mut t, &vs).unwrap();
        let grads = t.backward(l).unwrap();
        let h = 1e-6;
        for (k, x) in inputs.iter().enumerate() {
            let g = grads.wrt(vs[k], x.shape());
            for i in (0..x.len()).step_by((x.len() / 7).max(1)) {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = g.data()[i];
                assert!(
                    (fd - an).abs() <= tol * (1.0 + fd.abs()),
                    "input {k} index {i}: analytic {an} vs numeric {fd}"
                );
            }
        }
    }

    fn t(shape: &[usize], seed: u64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), pseudo(n, seed)).unwrap()
    }

    #[test]
    fn elementwise_gradients() {
        let a = t(&[3, 4], 1);
        let b = t(&[3, 4], 2);
        check_grad(&[a, b], |tp, v| {
            let s = tp.add(v[0], v[1])?;
            let d = tp.sub(s, v[1])?;
            let m = tp.mul(d, v[1])?;
            let q = tp.add_scaled(m, v[0], -0.3)?;
            let r = tp.relu(q)?;
            let ab = tp.abs(r, 0.1)?;
            let sc = tp.scale(ab, 2.5)?;
            tp.sum(sc)
        }, 1e-6);
    }

    #[test]
    fn reduction_gradients() {
        let a = t(&[10], 3);
        check_grad(std::slice::from_ref(&a), |tp, v| tp.norm_l2(v[0]), 1e-6);
        check_grad(std::slice::from_ref(&a), |tp, v| tp.norm_l1(v[0]), 1e-6);
        check_grad(std::slice::from_ref(&a), |tp, v| tp.mean(v[0]), 1e-6);
        check_grad(&[a], |tp, v| tp.max(v[0]), 1e-6);
    }

    #[test]
    fn conv_gradients() {
        let x = t(&[2, 6, 5], 4);
        let w = t(&[3, 2, 3, 3], 5);
        let b = t(&[3], 6);
        check_grad(&[x, w, b], |tp, v| {
            let y = tp.conv2d(v[0], v[1], Some(v[2]))?;
            let y = tp.mul(y, y)?;
            tp.sum(y)
        }, 1e-6);
    }

    #[test]
    fn structural_gradients() {
        let a = t(&[2, 3, 3], 7);
        let b = t(&[1, 3, 3], 8);
        check_grad(&[a, b], |tp, v| {
            let c = tp.concat(&[v[0], v[1]])?;
            let s = tp.slice(c, 1, 2)?;
            let s2 = tp.mul(s, s)?;
            tp.sum(s2)
        }, 1e-6);
    }

    #[test]
    fn fft_and_modulus_gradients() {
        let x = t(&[2, 8, 8], 9);
        check_grad(&[x], |tp, v| {
            let k = tp.fft2(v[0], false)?;
            let k2 = tp.fft2(k, true)?;
            let k3 = tp.fft2(k2, false)?;
            let w = tp.mul(k3, k3)?;
            let a = tp.complex_abs(w, 1e-3)?;
            tp.sum(a)
        }, 1e-6);
    }

    fn operator(h: usize) -> EncodingOperator {
        let coils = make_coils(h, h, 4, 3).unwrap();
        let mask = make_mask(h, 3, 4, MaskKind::Equidistant, 0).unwrap();
        EncodingOperator::new(coils, mask.to_kmask(h)).unwrap()
    }

    #[test]
    fn data_fidelity_gradients() {
        let e = operator(8);
        let solver = Arc::new(DataFidelity {
            encoding: e,
            forward_cg: CgConfig::converged(),
            backward_cg: CgConfig::converged(),
        });
        let z = t(&[2, 8, 8], 10);
        let rhs = t(&[2, 8, 8], 11);
        let mu = Tensor::scalar(0.3);
        let target = t(&[2, 8, 8], 12);
        check_grad(&[z, rhs, mu], move |tp, v| {
            let x = tp.data_fidelity(v[0], v[1], Penalty::Traced(v[2]), solver.clone())?;
            let c = tp.constant(target.clone())?;
            let d = tp.sub(x, c)?;
            let d2 = tp.mul(d, d)?;
            tp.sum(d2)
        }, 1e-5);
    }

    #[test]
    fn unconverged_backward_is_rejected() {
        let solver = Arc::new(DataFidelity {
            encoding: operator(8),
            forward_cg: CgConfig::converged(),
            backward_cg: CgConfig::new(1, 1e-14).unwrap(),
        });
        let mut tp = Tape::new();
        let z = tp.leaf(t(&[2, 8, 8], 13)).unwrap();
        let r = tp.constant(t(&[2, 8, 8], 14)).unwrap();
        let x = tp.data_fidelity(z, r, Penalty::Fixed(0.1), solver).unwrap();
        let l = tp.norm_l2(x).unwrap();
        assert!(matches!(tp.backward(l), Err(Error::Cg { .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tp = Tape::new();
        let a = tp.leaf(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let c = tp.constant(Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        let m = tp.mul(a, c).unwrap();
        let s = tp.sum(m).unwrap();
        let g = tp.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let mut tp = Tape::new();
        let a = tp.leaf(Tensor::from_vec(vec![1e300])).unwrap();
        let err = tp.mul(a, a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "mul" }));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tp = Tape::new();
        let a = tp.leaf(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tp.backward(a), Err(Error::NotScalar(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tp = Tape::new();
        let a = tp.leaf(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let b = tp.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(tp.add(a, b), Err(Error::ShapeMismatch { .. })));
    }
}
