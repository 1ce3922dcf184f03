//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows the [`ParamStore`] it reads parameters from, records
//! every primitive applied to [`Var`] handles and, on [`Graph::backward`],
//! returns the gradient of a scalar loss with respect to every parameter the
//! loss depends on.

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParamId, ParamStore};
use crate::nn::tensor::gemm;
use crate::nn::Tensor;

/// Finite stand-in for `-inf` in masked logits.
pub const MASK_SENTINEL: f64 = -1e9;

/// Logits at or below this value are treated as masked.
pub const MASK_THRESHOLD: f64 = -1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var, Vec<bool>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    Pick(Var, usize, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn check_finite(t: &Tensor, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// The single value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        check_finite(&value, name)?;
        Ok(self.push(value, op))
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push_checked(out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_ex(false, self.value(b), true)?;
        self.push_checked(out, Op::MatMulT(a, b), "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = x.zip_map(y, |p, q| p + q);
        self.push_checked(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = x.zip_map(y, |p, q| p - q);
        self.push_checked(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = x.zip_map(y, |p, q| p * q);
        self.push_checked(out, Op::Mul(a, b), "mul")
    }

    fn row_broadcast(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape {
                op,
                left: x.shape(),
                right: r.shape(),
            });
        }
        Ok(())
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push_checked(out, Op::AddRow(a, row), "add_row")
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= b;
            }
        }
        self.push_checked(out, Op::MulRow(a, row), "mul_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push_checked(out, Op::Scale(a, s), "scale")
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push_checked(out, Op::OneMinus(a), "one_minus")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_checked(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push_checked(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push_checked(out, Op::Tanh(a), "tanh")
    }

    fn row_mask(&self, x: &Tensor, mask: Option<&[bool]>, r: usize, c: usize) -> bool {
        mask.map_or(true, |m| m[c]) && x.get(r, c) > MASK_THRESHOLD
    }

    fn check_mask(&self, a: Var, mask: Option<&[bool]>) -> Result<()> {
        if let Some(m) = mask {
            if m.len() != self.value(a).cols() {
                return Err(Error::Shape {
                    op: "mask",
                    left: self.value(a).shape(),
                    right: (1, m.len()),
                });
            }
        }
        Ok(())
    }

    /// Row-wise softmax. Entries where `mask` is false, or whose logit is at
    /// or below [`MASK_THRESHOLD`], get probability exactly 0.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask(a, mask)?;
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let max = (0..cols)
                .filter(|&c| self.row_mask(x, mask, r, c))
                .map(|c| x.get(r, c))
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMasked);
            }
            let mut total = 0.0;
            for c in 0..cols {
                if self.row_mask(x, mask, r, c) {
                    let e = (x.get(r, c) - max).exp();
                    out.set(r, c, e);
                    total += e;
                }
            }
            for v in out.row_mut(r) {
                *v /= total;
            }
        }
        self.push_checked(out, Op::Softmax(a), "softmax")
    }

    /// Row-wise log-softmax with the same masking rule as [`Graph::softmax`];
    /// masked entries hold [`MASK_SENTINEL`] and pass no gradient.
    pub fn log_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask(a, mask)?;
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Tensor::filled(rows, cols, MASK_SENTINEL);
        let mut live = vec![false; rows * cols];
        for r in 0..rows {
            let max = (0..cols)
                .filter(|&c| self.row_mask(x, mask, r, c))
                .map(|c| x.get(r, c))
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMasked);
            }
            let mut total = 0.0;
            for c in 0..cols {
                if self.row_mask(x, mask, r, c) {
                    live[r * cols + c] = true;
                    total += (x.get(r, c) - max).exp();
                }
            }
            let lse = max + total.ln();
            for c in 0..cols {
                if live[r * cols + c] {
                    out.set(r, c, x.get(r, c) - lse);
                }
            }
        }
        self.push_checked(out, Op::LogSoftmax(a, live), "log_softmax")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::Shape {
                op: "concat_cols",
                left: self.value(parts[0]).shape(),
                right: self.value(*bad).shape(),
            });
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let t = self.value(*p);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: x.shape(),
                right: (start, len),
            });
        }
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r)
                .copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Row lookup: output row `i` is `table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: t.shape(),
                right: (bad, 0),
            });
        }
        let mut out = Tensor::zeros(indices.len(), t.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(out, Op::Gather(table, indices.to_vec())))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(1, cols);
        for r in 0..rows {
            for (o, v) in out.data_mut().iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / rows as f64);
        self.push_checked(out, Op::MeanRows(a), "mean_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push_checked(Tensor::scalar(s), Op::SumAll(a), "sum")
    }

    /// The single entry `(r, c)` as a `1 x 1` node.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let x = self.value(a);
        if r >= x.rows() || c >= x.cols() {
            return Err(Error::Shape {
                op: "pick",
                left: x.shape(),
                right: (r, c),
            });
        }
        let v = x.get(r, c);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, r, c)))
    }

    /// Normalizes each column over the rows, then applies `gamma` and `beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if self.value(gamma).shape() != (1, cols) || self.value(beta).shape() != (1, cols) {
            return Err(Error::Shape {
                op: "batch_norm",
                left: xv.shape(),
                right: self.value(gamma).shape(),
            });
        }
        let n = rows as f64;
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for (c, o) in xhat.row_mut(r).iter_mut().enumerate() {
                *o = (xv.get(r, c) - mean[c]) * inv_std[c];
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for r in 0..rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[c] + b[c];
            }
        }
        check_finite(&out, "batch_norm")?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::empty(self.store.len());

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, dy),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm(&dy, false, bv, true, &mut da, 0.0);
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, &dy, false, &mut db, 0.0);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm(&dy, false, bv, false, &mut da, 0.0);
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(&dy, true, av, false, &mut db, 0.0);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, dy.map(|x| -x));
                    acc(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let da = dy.zip_map(self.value(*b), |g, y| g * y);
                    let db = dy.zip_map(self.value(*a), |g, x| g * x);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, g) in dr.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += g;
                        }
                    }
                    acc(&mut grads, *row, dr);
                    acc(&mut grads, *a, dy);
                }
                Op::MulRow(a, row) => {
                    let x = self.value(*a);
                    let rv = self.value(*row).data();
                    let mut dr = Tensor::zeros(1, dy.cols());
                    let mut da = dy.clone();
                    for r in 0..dy.rows() {
                        for c in 0..dy.cols() {
                            dr.data_mut()[c] += dy.get(r, c) * x.get(r, c);
                            da.set(r, c, dy.get(r, c) * rv[c]);
                        }
                    }
                    acc(&mut grads, *row, dr);
                    acc(&mut grads, *a, da);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, dy.map(|g| g * s)),
                Op::OneMinus(a) => acc(&mut grads, *a, dy.map(|g| -g)),
                Op::Relu(a) => {
                    let da = dy.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    acc(&mut grads, *a, dy.zip_map(y, |g, s| g * s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    acc(&mut grads, *a, dy.zip_map(y, |g, t| g * (1.0 - t * t)));
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = y.row(r).iter().zip(dy.row(r)).map(|(p, g)| p * g).sum();
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (dy.get(r, c) - dot));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LogSoftmax(a, live) => {
                    let y = self.value(Var(i));
                    let cols = y.cols();
                    let mut da = Tensor::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let total: f64 = (0..cols)
                            .filter(|&c| live[r * cols + c])
                            .map(|c| dy.get(r, c))
                            .sum();
                        for c in 0..cols {
                            if live[r * cols + c] {
                                da.set(r, c, dy.get(r, c) - y.get(r, c).exp() * total);
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut dp = Tensor::zeros(dy.rows(), w);
                        for r in 0..dy.rows() {
                            dp.row_mut(r).copy_from_slice(&dy.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, *p, dp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        da.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Gather(table, idx) => {
                    let (rows, cols) = self.value(*table).shape();
                    let mut dt = Tensor::zeros(rows, cols);
                    for (r, &t) in idx.iter().enumerate() {
                        for (o, g) in dt.row_mut(t).iter_mut().zip(dy.row(r)) {
                            *o += g;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Tensor::zeros(rows, cols);
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (o, g) in da.row_mut(r).iter_mut().zip(dy.data()) {
                            *o = g * inv;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(rows, cols, dy.data()[0]));
                }
                Op::Pick(a, r, c) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Tensor::zeros(rows, cols);
                    da.set(*r, *c, dy.data()[0]);
                    acc(&mut grads, *a, da);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = xhat.shape();
                    let g = self.value(*gamma).data();
                    let mut dgamma = Tensor::zeros(1, cols);
                    let mut dbeta = Tensor::zeros(1, cols);
                    let mut sum_dxhat = vec![0.0; cols];
                    let mut sum_dxhat_xhat = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let d = dy.get(r, c);
                            dbeta.data_mut()[c] += d;
                            dgamma.data_mut()[c] += d * xhat.get(r, c);
                            let dxh = d * g[c];
                            sum_dxhat[c] += dxh;
                            sum_dxhat_xhat[c] += dxh * xhat.get(r, c);
                        }
                    }
                    let n = rows as f64;
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let dxh = dy.get(r, c) * g[c];
                            let v = inv_std[c] / n
                                * (n * dxh - sum_dxhat[c] - xhat.get(r, c) * sum_dxhat_xhat[c]);
                            dx.set(r, c, v);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
            }
        }
        Ok(out)
    }
}
