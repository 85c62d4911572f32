use std::borrow::Cow;

use rand::Rng;

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately broken backward rules, used as a negative control for the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the tanh derivative by 1.1.
    TanhBackward,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    PickPerRow(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    EmbeddingMean { table: Var, ids: Vec<Vec<usize>> },
    L2Norm(Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. Parameter
/// leaves borrow their tensors for the lifetime `'p`; the graph must be
/// dropped before those parameters are updated.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    fault: Option<Fault>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Trainable leaf borrowing an existing parameter tensor.
    pub fn param(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, true)
    }

    /// Leaf that receives no gradient, borrowing an existing tensor.
    pub fn frozen(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, false)
    }

    /// Owned leaf; `requires_grad` decides whether backward populates it.
    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.value(var).shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = matmul_raw(ta, tb);
        Ok(self.push_owned(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        Ok(self.push_owned(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x [m×n] + bias [1×n]`, bias repeated for every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(Error::dim("add_row", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push_owned(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push_owned(out, Op::Scale(x, factor), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Elementwise product with a constant tensor (masks, signs).
    pub fn mul_const(&mut self, x: Var, factor: Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != factor.shape() {
            return Err(Error::dim("mul_const", tx.shape(), factor.shape()));
        }
        let data = tx.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::new(tx.rows(), tx.cols(), data)?;
        Ok(self.push_owned(out, Op::MulConst(x, factor), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push_owned(out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push_owned(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push_owned(out, Op::Sigmoid(x), &[x])
    }

    /// `log σ(x)`, evaluated without forming σ(x).
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(log_sigmoid);
        self.push_owned(out, Op::LogSigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push_owned(out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push_owned(out, Op::Log(x), &[x])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        check_not_nan("softmax_rows", tx)?;
        let mut out = tx.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        Ok(self.push_owned(out, Op::SoftmaxRows(x), &[x]))
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        check_not_nan("log_softmax_rows", tx)?;
        let mut out = tx.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push_owned(out, Op::LogSoftmaxRows(x), &[x]))
    }

    /// Sum of all entries, as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push_owned(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(tx.sum() / tx.len() as f64);
        Ok(self.push_owned(out, Op::Mean(x), &[x]))
    }

    /// `m×n → m×1` row sums.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let sums: Vec<f64> = (0..tx.rows()).map(|r| tx.row(r).iter().sum()).collect();
        let out = Tensor::column(&sums);
        self.push_owned(out, Op::SumRows(x), &[x])
    }

    /// `out[r] = x[r, cols[r]]`, an `m×1` column.
    pub fn pick_per_row(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if cols.len() != tx.rows() {
            return Err(Error::dim("pick_per_row", tx.shape(), [cols.len(), 1]));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= tx.cols()) {
            return Err(Error::Contract(format!(
                "column index {bad} out of range for width {}",
                tx.cols()
            )));
        }
        let picked: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| tx.get(r, c)).collect();
        let out = Tensor::column(&picked);
        Ok(self.push_owned(out, Op::PickPerRow(x, cols.to_vec()), &[x]))
    }

    /// Row gather; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= tx.rows()) {
            return Err(Error::Contract(format!(
                "row index {bad} out of range for {} rows",
                tx.rows()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * tx.cols());
        for &i in indices {
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::new(indices.len(), tx.cols(), data)?;
        Ok(self.push_owned(out, Op::GatherRows(x, indices.to_vec()), &[x]))
    }

    /// Vertical stacking of tensors with equal width.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::dim("concat_rows", self.value(first).shape(), t.shape()));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push_owned(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Mean of embedding-table rows per sequence. An empty sequence pools
    /// to the zero vector.
    pub fn embedding_mean(&mut self, table: Var, ids: &[Vec<usize>]) -> Result<Var> {
        let tt = self.value(table);
        let width = tt.cols();
        let mut out = Tensor::zeros(ids.len(), width);
        for (r, seq) in ids.iter().enumerate() {
            if seq.is_empty() {
                continue;
            }
            let inv = 1.0 / seq.len() as f64;
            let out_row = out.row_mut(r);
            for &id in seq {
                if id >= tt.rows() {
                    return Err(Error::Contract(format!(
                        "token id {id} out of range for vocabulary of {}",
                        tt.rows()
                    )));
                }
                for (o, e) in out_row.iter_mut().zip(tt.row(id)) {
                    *o += e * inv;
                }
            }
        }
        Ok(self.push_owned(
            out,
            Op::EmbeddingMean {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Euclidean norm of all entries, as a `1×1` tensor.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).squared_norm().sqrt());
        self.push_owned(out, Op::L2Norm(x), &[x])
    }

    /// Inverted dropout. Identity when `rng` is `None` (eval mode) or the
    /// rate is zero; otherwise each entry survives with probability
    /// `1 - rate` and is scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let [rows, cols] = self.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, Tensor::new(rows, cols, mask)?)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = matmul_a_bt(g, self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = matmul_at_b(self.value(*a), g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = zip(g, self.value(*b), |gv, bv| gv * bv);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = zip(g, self.value(*a), |gv, av| gv * av);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, g.map(|v| v * factor));
            }
            Op::MulConst(x, factor) => {
                self.accumulate(grads, *x, zip(g, factor, |gv, f| gv * f));
            }
            Op::Tanh(x) => {
                let bump = if self.fault == Some(Fault::TanhBackward) {
                    1.1
                } else {
                    1.0
                };
                self.accumulate(grads, *x, zip(g, y, |gv, yv| bump * gv * (1.0 - yv * yv)));
            }
            Op::Relu(x) => {
                let gx = zip(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, zip(g, y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::LogSigmoid(x) => {
                let gx = zip(g, self.value(*x), |gv, xv| gv * sigmoid(-xv));
                self.accumulate(grads, *x, gx);
            }
            Op::Exp(x) => {
                self.accumulate(grads, *x, zip(g, y, |gv, yv| gv * yv));
            }
            Op::Log(x) => {
                self.accumulate(grads, *x, zip(g, self.value(*x), |gv, xv| gv / xv));
            }
            Op::SoftmaxRows(x) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmaxRows(x) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for (o, yv) in gx.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= yv.exp() * gsum;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let [rows, cols] = self.shape(*x);
                self.accumulate(grads, *x, Tensor::full(rows, cols, g.item()));
            }
            Op::Mean(x) => {
                let [rows, cols] = self.shape(*x);
                let share = g.item() / (rows * cols) as f64;
                self.accumulate(grads, *x, Tensor::full(rows, cols, share));
            }
            Op::SumRows(x) => {
                let [rows, cols] = self.shape(*x);
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gv = g.get(r, 0);
                    gx.row_mut(r).fill(gv);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::PickPerRow(x, cols) => {
                let [rows, width] = self.shape(*x);
                let mut gx = Tensor::zeros(rows, width);
                for (r, &c) in cols.iter().enumerate() {
                    gx.row_mut(r)[c] = g.get(r, 0);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, indices) => {
                let [rows, width] = self.shape(*x);
                let mut gx = Tensor::zeros(rows, width);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [rows, cols] = self.shape(p);
                    if self.requires_grad(p) {
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        let gp = Tensor::new(rows, cols, slice).expect("slice matches part shape");
                        self.accumulate(grads, p, gp);
                    }
                    offset += rows;
                }
            }
            Op::EmbeddingMean { table, ids } => {
                let [rows, width] = self.shape(*table);
                let gt = grads[table.0].get_or_insert_with(|| Tensor::zeros(rows, width));
                for (r, seq) in ids.iter().enumerate() {
                    if seq.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / seq.len() as f64;
                    let gr = g.row(r);
                    for &id in seq {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(gr) {
                            *o += v * inv;
                        }
                    }
                }
            }
            Op::L2Norm(x) => {
                let norm = y.item();
                let gx = if norm > 0.0 {
                    let factor = g.item() / norm;
                    self.value(*x).map(|v| v * factor)
                } else {
                    let [rows, cols] = self.shape(*x);
                    Tensor::zeros(rows, cols)
                };
                self.accumulate(grads, *x, gx);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, contribution: Tensor) {
        if !self.requires_grad(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// Gradients of a scalar with respect to the graph's trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not require grad or the loss does not depend
    /// on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Takes the gradient for `var`, or zeros of `shape` when the loss does
    /// not reach it.
    pub fn take_or_zeros(&mut self, var: Var, shape: [usize; 2]) -> Tensor {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("operands share a shape")
}

fn check_not_nan(op: &str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN input to {op}")));
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}
