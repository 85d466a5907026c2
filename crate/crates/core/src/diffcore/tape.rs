use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    /// Matrix plus a `1 x cols` row broadcast over every row.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    Clip(usize, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable from another tape");
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.index].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.index)
    }

    fn node(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn unary(&mut self, a: Var, op: impl Fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.node(ia).map(f);
        let rg = self.rg(ia);
        Ok(self.push(value, op(ia), rg))
    }

    fn binary_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.node(ia), self.node(ib));
        ta.check_same_shape(tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, op(ia, ib), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.node(ia), self.node(ib));
        if ta.cols() != tb.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let value = Tensor::new(n, m, matmul_raw(ta.data(), tb.data(), n, k, m))?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::MatMul(ia, ib), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.node(ia).transpose();
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Transpose(ia), rg))
    }

    /// Elementwise sum. `b` may also be a `1 x cols` row, broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.node(ia), self.node(ib));
        if ta.same_shape(tb) {
            return self.binary_same(a, b, "add", Op::Add, |x, y| x + y);
        }
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(Error::Shape {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let cols = ta.cols();
        let row = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + row[i % cols])
            .collect();
        let value = Tensor::new(ta.rows(), cols, data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::AddRow(ia, ib), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(a, |i| Op::Scale(i, factor), |x| x * factor)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log, f64::ln)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus, softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square, |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let total = self.node(ia).data().iter().sum::<f64>();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(total), Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.node(ia);
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(mean), Op::Mean(ia), rg))
    }

    /// Sums each row: `n x m -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.node(ia);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let value = Tensor::new(t.rows(), 1, data)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::RowSum(ia), rg))
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.node(ia), self.node(ib));
        if ta.cols() != tb.cols() {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let value = Tensor::new(ta.rows() + tb.rows(), ta.cols(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::ConcatRows(ia, ib), rg))
    }

    /// Places `b` to the right of `a`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.node(ia), self.node(ib));
        if ta.rows() != tb.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row_slice(r));
            data.extend_from_slice(tb.row_slice(r));
        }
        let value = Tensor::new(ta.rows(), ta.cols() + tb.cols(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::ConcatCols(ia, ib), rg))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.node(ia);
        if rows.is_empty() {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![0],
            });
        }
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            if r >= t.rows() {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![r],
                });
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let value = Tensor::new(rows.len(), t.cols(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::GatherRows(ia, rows.to_vec()), rg))
    }

    /// Clamps into `[lo, hi]`. The gradient passes only strictly inside the interval.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, |i| Op::Clip(i, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        let lt = self.node(il);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[il] = Some(Tensor::scalar(1.0));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let out = &self.nodes[i].value;
            match &self.nodes[i].op {
                Op::Leaf => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.node(*a), self.node(*b));
                    let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                    if self.rg(*a) {
                        let ga = matmul_nt_raw(g.data(), tb.data(), n, m, k);
                        accumulate(&mut grads, *a, Tensor::new(n, k, ga)?);
                    }
                    if self.rg(*b) {
                        let gb = matmul_tn_raw(ta.data(), g.data(), n, k, m);
                        accumulate(&mut grads, *b, Tensor::new(k, m, gb)?);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    if self.rg(*b) {
                        let cols = g.cols();
                        let mut row = vec![0.0; cols];
                        for r in 0..g.rows() {
                            for (acc, &x) in row.iter_mut().zip(g.row_slice(r)) {
                                *acc += x;
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::new(1, cols, row)?);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.node(*a), self.node(*b));
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, zip_map(&g, tb, |gi, y| gi * y));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, zip_map(&g, ta, |gi, x| gi * x));
                    }
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, g.map(|x| x * factor)),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, zip_map(&g, out, |gi, s| gi * s * (1.0 - s)))
                }
                Op::Relu(a) => {
                    let ta = self.node(*a);
                    let ga = zip_map(&g, ta, |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, zip_map(&g, out, |gi, e| gi * e)),
                Op::Log(a) => {
                    let ta = self.node(*a);
                    accumulate(&mut grads, *a, zip_map(&g, ta, |gi, x| gi / x));
                }
                Op::Softplus(a) => {
                    let ta = self.node(*a);
                    accumulate(&mut grads, *a, zip_map(&g, ta, |gi, x| gi * sigmoid(x)));
                }
                Op::Square(a) => {
                    let ta = self.node(*a);
                    accumulate(&mut grads, *a, zip_map(&g, ta, |gi, x| 2.0 * x * gi));
                }
                Op::Sum(a) => {
                    let ta = self.node(*a);
                    accumulate(&mut grads, *a, Tensor::filled(ta.rows(), ta.cols(), g.item()));
                }
                Op::Mean(a) => {
                    let ta = self.node(*a);
                    let v = g.item() / ta.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(ta.rows(), ta.cols(), v));
                }
                Op::RowSum(a) => {
                    let ta = self.node(*a);
                    let ga = Tensor::from_fn(ta.rows(), ta.cols(), |r, _| g.get(r, 0));
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.node(*a).rows();
                    let cols = g.cols();
                    let (top, bottom) = g.data().split_at(ra * cols);
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Tensor::new(ra, cols, top.to_vec())?);
                    }
                    if self.rg(*b) {
                        let rb = g.rows() - ra;
                        accumulate(&mut grads, *b, Tensor::new(rb, cols, bottom.to_vec())?);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.node(*a).cols();
                    let cb = g.cols() - ca;
                    let mut ga = Vec::with_capacity(g.rows() * ca);
                    let mut gb = Vec::with_capacity(g.rows() * cb);
                    for r in 0..g.rows() {
                        let row = g.row_slice(r);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Tensor::new(g.rows(), ca, ga)?);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, Tensor::new(g.rows(), cb, gb)?);
                    }
                }
                Op::GatherRows(a, rows) => {
                    let ta = self.node(*a);
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for (k, &r) in rows.iter().enumerate() {
                        for (acc, &x) in ga.row_slice_mut(r).iter_mut().zip(g.row_slice(k)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clip(a, lo, hi) => {
                    let ta = self.node(*a);
                    let (lo, hi) = (*lo, *hi);
                    let ga = zip_map(&g, ta, |gi, x| if x > lo && x < hi { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.rows(), g.cols(), data).expect("same shape as gradient")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
