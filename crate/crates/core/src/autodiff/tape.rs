use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Index of a learnable tensor in the caller's parameter storage.
pub type ParamId = usize;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Element-wise functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Abs,
    Ln,
    Square,
    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    Clamp(f64, f64),
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Identity => x,
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Abs => x.abs(),
            Unary::Ln => x.ln(),
            Unary::Square => x * x,
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// Derivative given the input `x` and the output `y = f(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Identity => 1.0,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Ln => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Clamp(lo, hi) => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Embedding { table: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Broadcast, Var, Var),
    Scale(Var, f64),
    Unary(Unary, Var),
    Concat(Var, Var),
    Reshape(Var),
    Softmax { x: Var },
    MaxPool { x: Var, argmax: Vec<Option<usize>> },
    Dropout { x: Var, scale: Vec<f64> },
    GatherRows { x: Var, index: Vec<usize> },
    GroupWeightedSum { weights: Var, values: Var },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Sparse row gradient of an embedding table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad {
    pub cols: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

/// Result of [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    inputs: BTreeMap<Var, Tensor>,
    pub dense: BTreeMap<ParamId, Tensor>,
    pub sparse: BTreeMap<ParamId, SparseGrad>,
}

impl Gradients {
    /// Gradient with respect to a tensor registered through [`Tape::input`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.inputs.get(&var)
    }

    pub fn is_finite(&self) -> bool {
        self.dense.values().all(Tensor::is_finite)
            && self
                .sparse
                .values()
                .all(|s| s.rows.values().all(|r| r.iter().all(|v| v.is_finite())))
    }
}

/// Records tensor operations so that adjoints can be replayed in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A differentiable leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// A dense parameter. Repeated requests for the same id share one node.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    /// Looks up `rows` of an embedding table; gradients flow back as sparse rows.
    pub fn embedding(&mut self, id: ParamId, table: &Tensor, rows: &[usize]) -> Var {
        let cols = table.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(table.row(r));
        }
        let value = Tensor::new(rows.len(), cols, data).expect("row gather");
        self.push(
            value,
            Op::Embedding {
                table: id,
                rows: rows.to_vec(),
            },
            true,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: [m, k],
                rhs: [k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(m, n, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// `x · wᵀ + b` with `w: out×in` and `b: 1×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w);
        let h = self.matmul(x, wt)?;
        self.add(h, b)
    }

    /// Element-wise binary map. `y` may be the same shape as `x`, a 1×1
    /// scalar, or a single row matching `x`'s column count.
    pub fn binary(&mut self, op: Binary, x: Var, y: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ys = self.shape(y);
        let bc = if xs == ys {
            Broadcast::Same
        } else if ys == [1, 1] {
            Broadcast::Scalar
        } else if ys[0] == 1 && ys[1] == xs[1] {
            Broadcast::Row
        } else {
            return Err(Error::Shape {
                op: "binary",
                lhs: xs,
                rhs: ys,
            });
        };
        let xv = self.value(x);
        let yv = self.value(y);
        let cols = xs[1];
        let f = |a: f64, b: f64| match op {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        };
        let data: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let b = match bc {
                    Broadcast::Same => yv.data()[i],
                    Broadcast::Scalar => yv.data()[0],
                    Broadcast::Row => yv.data()[i % cols],
                };
                f(a, b)
            })
            .collect();
        let value = Tensor::new(xs[0], xs[1], data)?;
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(value, Op::Binary(op, bc, x, y), rg))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(Binary::Add, x, y)
    }

    pub fn sub(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(Binary::Sub, x, y)
    }

    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(Binary::Mul, x, y)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let [r, c] = self.shape(x);
        let value = Tensor::new(r, c, data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn unary(&mut self, f: Unary, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| f.apply(v)).collect();
        let [r, c] = self.shape(x);
        let value = Tensor::new(r, c, data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Unary(f, x), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, x: Var, y: Var) -> Result<Var> {
        let [r, a] = self.shape(x);
        let [r2, b] = self.shape(y);
        if r != r2 {
            return Err(Error::Shape {
                op: "concat",
                lhs: [r, a],
                rhs: [r2, b],
            });
        }
        let mut data = Vec::with_capacity(r * (a + b));
        for i in 0..r {
            data.extend_from_slice(self.value(x).row(i));
            data.extend_from_slice(self.value(y).row(i));
        }
        let value = Tensor::new(r, a + b, data)?;
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(value, Op::Concat(x, y), rg))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).clone().reshaped(rows, cols)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Row-wise softmax restricted to slots where `mask` is true; masked slots
    /// get weight exactly zero. Every row needs at least one valid slot.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let [rows, cols] = self.shape(x);
        if mask.len() != rows * cols {
            return Err(Error::Shape {
                op: "softmax_masked",
                lhs: [rows, cols],
                rhs: [mask.len(), 1],
            });
        }
        let xv = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            if !m.contains(&true) {
                return Err(Error::EmptyMask { row: r });
            }
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for c in 0..cols {
                if m[c] {
                    o[c] = (row[c] - max).exp();
                    total += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(rows, cols, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax { x }, rg))
    }

    /// Per-column maximum over the unmasked rows of consecutive groups of
    /// `group` rows. A group without valid rows yields zeros. Gradient goes to
    /// the first row attaining the maximum.
    pub fn max_pool_groups(&mut self, x: Var, mask: &[bool], group: usize) -> Result<Var> {
        let [rows, cols] = self.shape(x);
        if group == 0 || rows % group != 0 || mask.len() != rows {
            return Err(Error::Shape {
                op: "max_pool",
                lhs: [rows, cols],
                rhs: [mask.len(), group],
            });
        }
        let groups = rows / group;
        let xv = self.value(x);
        let mut out = vec![0.0; groups * cols];
        let mut argmax = vec![None; groups * cols];
        for g in 0..groups {
            for c in 0..cols {
                let mut best: Option<(usize, f64)> = None;
                for r in g * group..(g + 1) * group {
                    if !mask[r] {
                        continue;
                    }
                    let v = xv.get(r, c);
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((r, v));
                    }
                }
                if let Some((r, v)) = best {
                    out[g * cols + c] = v;
                    argmax[g * cols + c] = Some(r);
                }
            }
        }
        let value = Tensor::new(groups, cols, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::MaxPool { x, argmax },
            rg,
        ))
    }

    /// Single-group form of [`Tape::max_pool_groups`]: `r×d → 1×d`.
    pub fn max_pool_columns(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let rows = self.shape(x)[0];
        if rows == 0 {
            let cols = self.shape(x)[1];
            return Ok(self.constant(Tensor::zeros(1, cols)));
        }
        self.max_pool_groups(x, mask, rows)
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Var {
        if !training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let scale: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&scale)
            .map(|(v, s)| v * s)
            .collect();
        let [r, c] = self.shape(x);
        let value = Tensor::new(r, c, data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, scale }, rg)
    }

    /// `out[r] = x[index[r]]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let [rows, cols] = self.shape(x);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: [rows, cols],
                    rhs: [i, 1],
                });
            }
            data.extend_from_slice(self.value(x).row(i));
        }
        let value = Tensor::new(index.len(), cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// `weights: G×R`, `values: (G·R)×d` → `G×d` with
    /// `out[g] = Σ_r weights[g, r] · values[g·R + r]`.
    pub fn group_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let [g, r] = self.shape(weights);
        let [n, d] = self.shape(values);
        if g * r != n {
            return Err(Error::Shape {
                op: "group_weighted_sum",
                lhs: [g, r],
                rhs: [n, d],
            });
        }
        let w = self.value(weights);
        let v = self.value(values);
        let mut out = vec![0.0; g * d];
        for gi in 0..g {
            let o = &mut out[gi * d..(gi + 1) * d];
            for ri in 0..r {
                let wv = w.get(gi, ri);
                if wv == 0.0 {
                    continue;
                }
                for (ov, vv) in o.iter_mut().zip(v.row(gi * r + ri)) {
                    *ov += wv * vv;
                }
            }
        }
        let value = Tensor::new(g, d, out)?;
        let rg = self.rg(weights) || self.rg(values);
        Ok(self.push(value, Op::GroupWeightedSum { weights, values }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    out.inputs.insert(Var(i), g);
                }
                Op::Param(id) => match out.dense.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.dense.insert(*id, g);
                    }
                },
                Op::Embedding { table, rows } => {
                    let cols = g.cols();
                    let sparse = out.sparse.entry(*table).or_insert_with(|| SparseGrad {
                        cols,
                        rows: BTreeMap::new(),
                    });
                    for (k, &r) in rows.iter().enumerate() {
                        let acc = sparse.rows.entry(r).or_insert_with(|| vec![0.0; cols]);
                        for (a, v) in acc.iter_mut().zip(g.row(k)) {
                            *a += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let [m, k] = self.shape(*a);
                    let n = self.shape(*b)[1];
                    if self.rg(*a) {
                        let mut da = vec![0.0; m * k];
                        matmul_nt(g.data(), self.value(*b).data(), m, n, k, &mut da);
                        accumulate(&mut grads, *a, Tensor::new(m, k, da)?);
                    }
                    if self.rg(*b) {
                        let mut db = vec![0.0; k * n];
                        matmul_tn(self.value(*a).data(), g.data(), m, k, n, &mut db);
                        accumulate(&mut grads, *b, Tensor::new(k, n, db)?);
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose());
                }
                Op::Binary(op, bc, x, y) => {
                    let cols = g.cols();
                    if self.rg(*x) {
                        let yv = self.value(*y);
                        let dx: Vec<f64> = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(j, &gv)| match op {
                                Binary::Add | Binary::Sub => gv,
                                Binary::Mul => gv * broadcast_at(yv, *bc, j, cols),
                            })
                            .collect();
                        accumulate(&mut grads, *x, Tensor::new(g.rows(), cols, dx)?);
                    }
                    if self.rg(*y) {
                        let xv = self.value(*x);
                        let [yr, yc] = self.shape(*y);
                        let mut dy = vec![0.0; yr * yc];
                        for (j, &gv) in g.data().iter().enumerate() {
                            let contrib = match op {
                                Binary::Add => gv,
                                Binary::Sub => -gv,
                                Binary::Mul => gv * xv.data()[j],
                            };
                            let slot = match bc {
                                Broadcast::Same => j,
                                Broadcast::Scalar => 0,
                                Broadcast::Row => j % cols,
                            };
                            dy[slot] += contrib;
                        }
                        accumulate(&mut grads, *y, Tensor::new(yr, yc, dy)?);
                    }
                }
                Op::Scale(x, f) => {
                    let d = g.data().iter().map(|v| v * f).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), d)?);
                }
                Op::Unary(f, x) => {
                    let xv = self.value(*x);
                    let d = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .zip(node.value.data())
                        .map(|((gv, &xi), &yi)| gv * f.derivative(xi, yi))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), d)?);
                }
                Op::Concat(x, y) => {
                    let a = self.shape(*x)[1];
                    let b = self.shape(*y)[1];
                    let rows = g.rows();
                    if self.rg(*x) {
                        let mut dx = Vec::with_capacity(rows * a);
                        for r in 0..rows {
                            dx.extend_from_slice(&g.row(r)[..a]);
                        }
                        accumulate(&mut grads, *x, Tensor::new(rows, a, dx)?);
                    }
                    if self.rg(*y) {
                        let mut dy = Vec::with_capacity(rows * b);
                        for r in 0..rows {
                            dy.extend_from_slice(&g.row(r)[a..]);
                        }
                        accumulate(&mut grads, *y, Tensor::new(rows, b, dy)?);
                    }
                }
                Op::Reshape(x) => {
                    let [r, c] = self.shape(*x);
                    accumulate(&mut grads, *x, g.reshaped(r, c)?);
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let [rows, cols] = y.shape();
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(rows, cols, dx)?);
                }
                Op::MaxPool { x, argmax } => {
                    let [rows, cols] = self.shape(*x);
                    let mut dx = Tensor::zeros(rows, cols);
                    for (k, src) in argmax.iter().enumerate() {
                        if let Some(r) = src {
                            let c = k % cols;
                            let v = dx.get(*r, c) + g.data()[k];
                            dx.set(*r, c, v);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, scale } => {
                    let d = g.data().iter().zip(scale).map(|(a, s)| a * s).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), d)?);
                }
                Op::GatherRows { x, index } => {
                    let [rows, cols] = self.shape(*x);
                    let mut dx = Tensor::zeros(rows, cols);
                    for (k, &src) in index.iter().enumerate() {
                        for (a, b) in dx.row_mut(src).iter_mut().zip(g.row(k)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GroupWeightedSum { weights, values } => {
                    let [gn, r] = self.shape(*weights);
                    let d = self.shape(*values)[1];
                    if self.rg(*weights) {
                        let v = self.value(*values);
                        let mut dw = Tensor::zeros(gn, r);
                        for gi in 0..gn {
                            for ri in 0..r {
                                let dot: f64 =
                                    g.row(gi).iter().zip(v.row(gi * r + ri)).map(|(a, b)| a * b).sum();
                                dw.set(gi, ri, dot);
                            }
                        }
                        accumulate(&mut grads, *weights, dw);
                    }
                    if self.rg(*values) {
                        let w = self.value(*weights);
                        let mut dv = Tensor::zeros(gn * r, d);
                        for gi in 0..gn {
                            for ri in 0..r {
                                let wv = w.get(gi, ri);
                                for (a, b) in dv.row_mut(gi * r + ri).iter_mut().zip(g.row(gi)) {
                                    *a = wv * b;
                                }
                            }
                        }
                        accumulate(&mut grads, *values, dv);
                    }
                }
                Op::Sum(x) => {
                    let [r, c] = self.shape(*x);
                    accumulate(&mut grads, *x, Tensor::filled(r, c, g.item()));
                }
            }
        }
        Ok(out)
    }
}

fn broadcast_at(t: &Tensor, bc: Broadcast, j: usize, cols: usize) -> f64 {
    match bc {
        Broadcast::Same => t.data()[j],
        Broadcast::Scalar => t.data()[0],
        Broadcast::Row => t.data()[j % cols],
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
