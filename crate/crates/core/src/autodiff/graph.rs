//! Tape-based reverse-mode differentiation over [`Tensor`] matrices.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! tape is already topologically sorted and `backward` is a single reverse
//! sweep. Nodes that do not depend on any gradient-requiring leaf are never
//! visited during the sweep.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Largest magnitude a squashed value may take; keeps tanh outputs strictly
/// inside (-1, 1) even when the pre-activation saturates in `f64`.
pub const TANH_BOUND: f64 = 1.0 - 1e-15;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    RepeatCols(Var, usize),
    SumRowGroups(Var, usize),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn broadcast_shape(context: &str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::shape(context, format!("{a:?} broadcastable with"), format!("{b:?}"))),
    }
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let r = if shape[0] == 1 { 0 } else { r };
    let c = if shape[1] == 1 { 0 } else { c };
    r * shape[1] + c
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient during `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Same value as `v`, cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated at `v` by the last `backward`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient at `v`, or zeros of the right shape when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.nodes[v.0].value.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.cols() != bv.rows() {
            return Err(Error::shape(
                "matmul",
                format!("inner dimension {}", bv.rows()),
                av.cols(),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, av.data(), false, bv.data(), false, 0.0, out.data_mut());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        let shape = broadcast_shape(name, sa, sb)?;
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        if sa == sb {
            data.extend(av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)));
        } else {
            for r in 0..shape[0] {
                for c in 0..shape[1] {
                    data.push(f(av.data()[bidx(sa, r, c)], bv.data()[bidx(sb, r, c)]));
                }
            }
        }
        Tensor::from_vec(shape[0], shape[1], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "div", |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "minimum", |x, y| if y < x { y } else { x })?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Minimum(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.nodes[a.0].value.map(f);
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh().clamp(-TANH_BOUND, TANH_BOUND))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(v) => self.nodes[v.0].value.rows(),
            None => return Err(Error::Usage("concat_cols of zero tensors".into())),
        };
        let mut cols = 0;
        for (i, p) in parts.iter().enumerate() {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(Error::shape(format!("concat_cols part {i}"), format!("{rows} rows"), t.rows()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if start + len > t.cols() {
            return Err(Error::shape("slice_cols", format!("at least {} cols", start + len), t.cols()));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(t.rows(), len, data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Row `i` of the output is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape("gather_rows", format!("index < {}", t.rows()), bad));
        }
        let out = t.select_rows(indices);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), rg))
    }

    /// Each column repeated `k` times in place: `out[:, i*k + j] = a[:, i]`.
    pub fn repeat_cols(&mut self, a: Var, k: usize) -> Var {
        let t = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(t.len() * k);
        for r in 0..t.rows() {
            for &x in t.row(r) {
                data.extend(std::iter::repeat_n(x, k));
            }
        }
        let out = Tensor::from_vec(t.rows(), t.cols() * k, data).expect("repeat_cols shape");
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::RepeatCols(a, k), rg)
    }

    /// Sums consecutive blocks of `group` rows: `[g*n, m] -> [n, m]`.
    pub fn sum_row_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if group == 0 || t.rows() % group != 0 {
            return Err(Error::shape("sum_row_groups", format!("rows divisible by {group}"), t.rows()));
        }
        let n = t.rows() / group;
        let mut out = Tensor::zeros(n, t.cols());
        for r in 0..t.rows() {
            let dst = r / group;
            for c in 0..t.cols() {
                let v = out.get(dst, c) + t.get(r, c);
                out.set(dst, c, v);
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::SumRowGroups(a, group), rg))
    }

    /// Per-row sum: `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::column_vector(data);
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.nodes[a.0].value.sum());
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::Mean(a), rg)
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (x, d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *x += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reduces a broadcast gradient `g` (of the output shape) back to `shape`.
    fn unbroadcast(g: &Tensor, shape: [usize; 2], f: impl Fn(usize, f64) -> f64) -> Tensor {
        let mut out = Tensor::zeros(shape[0], shape[1]);
        if g.shape() == shape {
            for (i, (o, &x)) in out.data_mut().iter_mut().zip(g.data()).enumerate() {
                *o = f(i, x);
            }
        } else {
            let cols = g.cols();
            for r in 0..g.rows() {
                for c in 0..cols {
                    let i = r * cols + c;
                    out.data_mut()[bidx(shape, r, c)] += f(i, g.data()[i]);
                }
            }
        }
        out
    }

    /// Reverse sweep from the scalar `loss`. Gradients of earlier `backward`
    /// calls are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Usage(
                "backward called on a tensor that does not depend on any parameter".into(),
            ));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &Tensor) {
        let out_shape = self.nodes[i].value.shape();
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.cols();
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, 1.0, g.data(), false, self.nodes[b.0].value.data(), true, 0.0, da.data_mut());
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, 1.0, self.nodes[a.0].value.data(), true, g.data(), false, 0.0, db.data_mut());
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                if self.nodes[a.0].requires_grad {
                    let da = Self::unbroadcast(g, sa, |_, x| x);
                    self.accumulate(a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = Self::unbroadcast(g, sb, |_, x| sign * x);
                    self.accumulate(b, db);
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) | Op::Minimum(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let cols = out_shape[1];
                let pair = |idx: usize| {
                    let (r, c) = (idx / cols, idx % cols);
                    (av.data()[bidx(sa, r, c)], bv.data()[bidx(sb, r, c)])
                };
                let (da, db) = match op {
                    Op::Mul(..) => (
                        Self::unbroadcast(g, sa, |idx, x| x * pair(idx).1),
                        Self::unbroadcast(g, sb, |idx, x| x * pair(idx).0),
                    ),
                    Op::Div(..) => (
                        Self::unbroadcast(g, sa, |idx, x| x / pair(idx).1),
                        Self::unbroadcast(g, sb, |idx, x| {
                            let (p, q) = pair(idx);
                            -x * p / (q * q)
                        }),
                    ),
                    _ => (
                        Self::unbroadcast(g, sa, |idx, x| {
                            let (p, q) = pair(idx);
                            if q < p { 0.0 } else { x }
                        }),
                        Self::unbroadcast(g, sb, |idx, x| {
                            let (p, q) = pair(idx);
                            if q < p { x } else { 0.0 }
                        }),
                    ),
                };
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(a, s) => self.accumulate(a, g.map(|x| x * s)),
            Op::Offset(a) => self.accumulate(a, g.clone()),
            Op::Relu(a) | Op::Tanh(a) | Op::Sigmoid(a) | Op::Softplus(a) | Op::Exp(a) | Op::Log(a)
            | Op::Square(a) | Op::Sqrt(a) | Op::Clamp(a, ..) => {
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[i].value;
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gi, (&xi, &yi))| {
                        gi * match *op {
                            Op::Relu(_) => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Op::Tanh(_) => 1.0 - yi * yi,
                            Op::Sigmoid(_) => yi * (1.0 - yi),
                            Op::Softplus(_) => sigmoid(xi),
                            Op::Exp(_) => yi,
                            Op::Log(_) => 1.0 / xi,
                            Op::Square(_) => 2.0 * xi,
                            Op::Sqrt(_) => 0.5 / yi,
                            Op::Clamp(_, lo, hi) => {
                                if xi >= lo && xi <= hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            _ => unreachable!(),
                        }
                    })
                    .collect();
                let d = Tensor::from_vec(x.rows(), x.cols(), data).expect("unary grad shape");
                self.accumulate(a, d);
            }
            Op::ConcatCols(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [rows, cols] = self.nodes[p.0].value.shape();
                    if self.nodes[p.0].requires_grad {
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(p, Tensor::from_vec(rows, cols, data).expect("concat grad"));
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                let mut d = Tensor::zeros(rows, cols);
                let len = g.cols();
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(a, d);
            }
            Op::GatherRows(a, ref indices) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                let mut d = Tensor::zeros(rows, cols);
                for (out_row, &src) in indices.iter().enumerate() {
                    for c in 0..cols {
                        d.data_mut()[src * cols + c] += g.get(out_row, c);
                    }
                }
                self.accumulate(a, d);
            }
            Op::RepeatCols(a, k) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let grow = g.row(r);
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = grow[c * k..(c + 1) * k].iter().sum();
                    }
                }
                self.accumulate(a, d);
            }
            Op::SumRowGroups(a, group) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.row(r / group));
                }
                self.accumulate(a, d);
            }
            Op::SumCols(a) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.get(r, 0);
                    d.data_mut()[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x = gr);
                }
                self.accumulate(a, d);
            }
            Op::Sum(a) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                self.accumulate(a, Tensor::filled(rows, cols, g.item()));
            }
            Op::Mean(a) => {
                let [rows, cols] = self.nodes[a.0].value.shape();
                let n = (rows * cols) as f64;
                self.accumulate(a, Tensor::filled(rows, cols, g.item() / n));
            }
        }
    }
}
