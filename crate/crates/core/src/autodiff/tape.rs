use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::params::{Gradients, ParamSet};
use super::tensor::{NodeRef, Tensor};
use crate::error::{Error, Result};

/// Lower bound applied inside `log`, `sqrt` and the L2 normalizers.
pub const CLAMP_MIN: f64 = 1e-12;

/// Default negative slope of `leaky_relu`.
pub const LEAKY_SLOPE: f64 = 0.01;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Abs,
    /// `ln(max(x, CLAMP_MIN))`
    Log,
    Exp,
    /// `sqrt(max(x, CLAMP_MIN))`
    Sqrt,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    FrobeniusSq,
}

/// Dimension collapsed by an axis reduction: `Rows` yields a `1 x cols`
/// tensor, `Cols` yields `rows x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// How the right operand of a binary op is expanded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Full,
    Scalar,
    /// `1 x cols`, repeated down the rows.
    Row,
    /// `rows x 1`, repeated across the columns.
    Col,
}

impl Broadcast {
    fn resolve(a: (usize, usize), b: (usize, usize)) -> Option<Broadcast> {
        if a == b {
            Some(Broadcast::Full)
        } else if b == (1, 1) {
            Some(Broadcast::Scalar)
        } else if b == (1, a.1) {
            Some(Broadcast::Row)
        } else if b == (a.0, 1) {
            Some(Broadcast::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Broadcast::Full => i * cols + j,
            Broadcast::Scalar => 0,
            Broadcast::Row => j,
            Broadcast::Col => i,
        }
    }
}

/// Input encoding of the pairwise edge scorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// `[h_u + h_v ‖ |h_u − h_v|]`; output is symmetric.
    Symmetric,
    /// `[h_u ‖ h_v]`.
    Directed,
}

/// Weights of the two-layer pairwise scorer
/// `sigmoid(relu(first(h_u, h_v) + b1) · w2 + b2)`.
///
/// In symmetric mode `w_first` multiplies the sum channel and `w_second` the
/// absolute-difference channel; in directed mode they multiply the source and
/// target embeddings.
#[derive(Clone, Debug)]
pub struct PairMlpWeights {
    pub w_first: Tensor,
    pub w_second: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Binary(BinaryOp, Broadcast, Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Unary(UnaryOp, Tensor, Tensor),
    Softmax(Tensor, Tensor),
    LogSoftmax(Tensor, Tensor),
    Reduce(Reduction, Option<Axis>, Tensor),
    Transpose(Tensor),
    ConcatCols(Tensor, Tensor),
    GatherRows(Tensor, Vec<usize>),
    Reshape(Tensor),
    RowNormalize(Tensor, Tensor, Vec<f64>),
    ColNormalize(Tensor, Tensor, Vec<f64>),
    OuterSum(Tensor, Tensor),
    PairMlp(PairMode, Tensor, PairMlpWeights, Tensor),
}

struct Node {
    rows: usize,
    cols: usize,
    op: Op,
}

/// Single-use record of differentiable operations.
///
/// Operations on constants return constants and leave the tape untouched; an
/// operation is recorded as soon as one operand is tracked. `backward` may be
/// called once.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Registers a named parameter and returns its tracked handle.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Tensor {
        let t = self.leaf(value);
        let index = t.node.expect("leaf is tracked").index;
        self.params.push((name.to_string(), index));
        t
    }

    /// Tracks every entry of `set`, returning a set of tracked handles.
    pub fn track(&mut self, set: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, value) in set.iter() {
            let t = self.param(name, value);
            out.insert(name, t).expect("names are unique in the source set");
        }
        out
    }

    fn leaf(&mut self, value: &Tensor) -> Tensor {
        let node = self.push(value.rows(), value.cols(), Op::Leaf);
        value.detach().with_node(node)
    }

    fn push(&mut self, rows: usize, cols: usize, op: Op) -> NodeRef {
        self.nodes.push(Node { rows, cols, op });
        NodeRef {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, t: &Tensor) -> Result<bool> {
        match t.node {
            None => Ok(false),
            Some(n) if n.tape == self.id => Ok(true),
            Some(_) => Err(Error::ForeignTensor),
        }
    }

    fn any_tracked(&self, inputs: &[&Tensor]) -> Result<bool> {
        let mut tracked = false;
        for t in inputs {
            tracked |= self.check(t)?;
        }
        Ok(tracked)
    }

    fn emit(
        &mut self,
        name: &'static str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        tracked: bool,
        op: impl FnOnce(&Tensor) -> Op,
    ) -> Result<Tensor> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let out = Tensor::from_parts(rows, cols, data);
        if !tracked {
            return Ok(out);
        }
        let op = op(&out);
        let node = self.push(rows, cols, op);
        Ok(out.with_node(node))
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let tracked = self.any_tracked(&[a, b])?;
        let data = kernels::matmul(a.data(), b.data(), a.rows(), a.cols(), b.cols());
        let (a2, b2) = (a.clone(), b.clone());
        self.emit("matmul", a.rows(), b.cols(), data, tracked, |_| Op::MatMul(a2, b2))
    }

    /// Elementwise `a ∘ b`. `b` may equal `a`'s shape, be `1x1`, `1 x cols`
    /// or `rows x 1`.
    pub fn binary(&mut self, op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let bc = Broadcast::resolve(a.shape(), b.shape()).ok_or(Error::ShapeMismatch {
            op: "binary",
            left: a.shape(),
            right: b.shape(),
        })?;
        let tracked = self.any_tracked(&[a, b])?;
        let (rows, cols) = a.shape();
        let (ad, bd) = (a.data(), b.data());
        if op == BinaryOp::Div && bd.contains(&0.0) {
            return Err(Error::DivisionByZero);
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let x = ad[i * cols + j];
                let y = bd[bc.index(i, j, cols)];
                data.push(match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => x / y,
                });
            }
        }
        let (a2, b2) = (a.clone(), b.clone());
        self.emit("binary", rows, cols, data, tracked, |_| Op::Binary(op, bc, a2, b2))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// `c · x` for a constant `c`.
    pub fn scale(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let data = x.data().iter().map(|v| v * c).collect();
        let x2 = x.clone();
        self.emit("scale", x.rows(), x.cols(), data, tracked, |_| Op::Scale(x2, c))
    }

    /// `x + c` for a constant `c`.
    pub fn add_scalar(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let data = x.data().iter().map(|v| v + c).collect();
        let x2 = x.clone();
        self.emit("add_scalar", x.rows(), x.cols(), data, tracked, |_| Op::AddScalar(x2))
    }

    pub fn unary(&mut self, op: UnaryOp, x: &Tensor) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let f: fn(f64, f64) -> f64 = match op {
            UnaryOp::Neg => |v, _| -v,
            UnaryOp::Abs => |v, _| v.abs(),
            UnaryOp::Log => |v, _| v.max(CLAMP_MIN).ln(),
            UnaryOp::Exp => |v, _| v.exp(),
            UnaryOp::Sqrt => |v, _| v.max(CLAMP_MIN).sqrt(),
            UnaryOp::Relu => |v, _| if v > 0.0 { v } else { 0.0 },
            UnaryOp::LeakyRelu(_) => |v, s| if v > 0.0 { v } else { s * v },
            UnaryOp::Sigmoid => |v, _| kernels::sigmoid(v),
        };
        let slope = match op {
            UnaryOp::LeakyRelu(s) => s,
            _ => 0.0,
        };
        let data = x.data().iter().map(|&v| f(v, slope)).collect();
        let x2 = x.clone();
        self.emit("unary", x.rows(), x.cols(), data, tracked, |out| {
            Op::Unary(op, x2, out.detach())
        })
    }

    pub fn neg(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Neg, x)
    }

    pub fn abs(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Abs, x)
    }

    pub fn log(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn sqrt(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Sqrt, x)
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: &Tensor, slope: f64) -> Result<Tensor> {
        self.unary(UnaryOp::LeakyRelu(slope), x)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn row_softmax(&mut self, x: &Tensor) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let data = kernels::softmax_rows(x.data(), x.rows(), x.cols(), None);
        let x2 = x.clone();
        self.emit("row_softmax", x.rows(), x.cols(), data, tracked, |out| {
            Op::Softmax(x2, out.detach())
        })
    }

    /// Softmax over the entries of each row where `mask` is true; the others
    /// come out as exact zeros.
    pub fn masked_row_softmax(&mut self, x: &Tensor, mask: &[bool]) -> Result<Tensor> {
        if mask.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_row_softmax",
                left: x.shape(),
                right: (mask.len(), 1),
            });
        }
        let tracked = self.any_tracked(&[x])?;
        let data = kernels::softmax_rows(x.data(), x.rows(), x.cols(), Some(mask));
        let x2 = x.clone();
        self.emit("masked_row_softmax", x.rows(), x.cols(), data, tracked, |out| {
            Op::Softmax(x2, out.detach())
        })
    }

    pub fn row_log_softmax(&mut self, x: &Tensor) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let data = kernels::log_softmax_rows(x.data(), x.rows(), x.cols());
        let x2 = x.clone();
        self.emit("row_log_softmax", x.rows(), x.cols(), data, tracked, |out| {
            Op::LogSoftmax(x2, out.detach())
        })
    }

    /// Reduction over everything (`axis = None`, 1x1 result) or one axis.
    pub fn reduce(&mut self, kind: Reduction, x: &Tensor, axis: Option<Axis>) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let (rows, cols) = x.shape();
        let d = x.data();
        let term = |v: f64| match kind {
            Reduction::FrobeniusSq => v * v,
            _ => v,
        };
        let (out_rows, out_cols, mut data) = match axis {
            None => {
                let mut acc = 0.0;
                for &v in d {
                    acc += term(v);
                }
                (1, 1, vec![acc])
            }
            Some(Axis::Cols) => {
                let mut out = vec![0.0; rows];
                for (i, o) in out.iter_mut().enumerate() {
                    for &v in &d[i * cols..(i + 1) * cols] {
                        *o += term(v);
                    }
                }
                (rows, 1, out)
            }
            Some(Axis::Rows) => {
                let mut out = vec![0.0; cols];
                for i in 0..rows {
                    for (o, &v) in out.iter_mut().zip(&d[i * cols..(i + 1) * cols]) {
                        *o += term(v);
                    }
                }
                (1, cols, out)
            }
        };
        if kind == Reduction::Mean {
            let count = match axis {
                None => rows * cols,
                Some(Axis::Cols) => cols,
                Some(Axis::Rows) => rows,
            };
            if count == 0 {
                return Err(Error::EmptyMask);
            }
            for v in data.iter_mut() {
                *v /= count as f64;
            }
        }
        let x2 = x.clone();
        self.emit("reduce", out_rows, out_cols, data, tracked, |_| {
            Op::Reduce(kind, axis, x2)
        })
    }

    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        self.reduce(Reduction::Sum, x, None)
    }

    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        self.reduce(Reduction::Mean, x, None)
    }

    pub fn frobenius_sq(&mut self, x: &Tensor) -> Result<Tensor> {
        self.reduce(Reduction::FrobeniusSq, x, None)
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let data = kernels::transpose(x.data(), x.rows(), x.cols());
        let x2 = x.clone();
        self.emit("transpose", x.cols(), x.rows(), data, tracked, |_| Op::Transpose(x2))
    }

    /// `[a ‖ b]`, columns of `a` first.
    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rows() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let tracked = self.any_tracked(&[a, b])?;
        let cols = a.cols() + b.cols();
        let mut data = Vec::with_capacity(a.rows() * cols);
        for i in 0..a.rows() {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        let (a2, b2) = (a.clone(), b.clone());
        self.emit("concat_cols", a.rows(), cols, data, tracked, |_| Op::ConcatCols(a2, b2))
    }

    /// Rows of `x` in the order given; indices may repeat (embedding lookup).
    pub fn gather_rows(&mut self, x: &Tensor, indices: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: x.shape(),
                right: (bad, 0),
            });
        }
        let tracked = self.any_tracked(&[x])?;
        let mut data = Vec::with_capacity(indices.len() * x.cols());
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let x2 = x.clone();
        let idx = indices.to_vec();
        self.emit("gather_rows", indices.len(), x.cols(), data, tracked, |_| {
            Op::GatherRows(x2, idx)
        })
    }

    /// Keeps the rows where `mask` is true, in order.
    pub fn slice_rows(&mut self, x: &Tensor, mask: &[bool]) -> Result<Tensor> {
        if mask.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: x.shape(),
                right: (mask.len(), 1),
            });
        }
        let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        self.gather_rows(x, &idx)
    }

    pub fn reshape(&mut self, x: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != x.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: x.shape(),
                right: (rows, cols),
            });
        }
        let tracked = self.any_tracked(&[x])?;
        let x2 = x.clone();
        self.emit("reshape", rows, cols, x.to_vec(), tracked, |_| Op::Reshape(x2))
    }

    /// Divides each row by `max(‖row‖₂, CLAMP_MIN)`.
    pub fn row_l2_normalize(&mut self, x: &Tensor) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let (rows, cols) = x.shape();
        let norms: Vec<f64> = (0..rows)
            .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(CLAMP_MIN))
            .collect();
        let mut data = x.to_vec();
        for i in 0..rows {
            for v in &mut data[i * cols..(i + 1) * cols] {
                *v /= norms[i];
            }
        }
        let x2 = x.clone();
        self.emit("row_l2_normalize", rows, cols, data, tracked, |out| {
            Op::RowNormalize(x2, out.detach(), norms)
        })
    }

    /// Divides each column by `max(‖col‖₂, CLAMP_MIN)`.
    pub fn col_l2_normalize(&mut self, x: &Tensor) -> Result<Tensor> {
        let tracked = self.any_tracked(&[x])?;
        let (rows, cols) = x.shape();
        let d = x.data();
        let mut sq = vec![0.0; cols];
        for i in 0..rows {
            for (s, &v) in sq.iter_mut().zip(&d[i * cols..(i + 1) * cols]) {
                *s += v * v;
            }
        }
        let norms: Vec<f64> = sq.into_iter().map(|s| s.sqrt().max(CLAMP_MIN)).collect();
        let mut data = x.to_vec();
        for i in 0..rows {
            for (v, n) in data[i * cols..(i + 1) * cols].iter_mut().zip(&norms) {
                *v /= n;
            }
        }
        let x2 = x.clone();
        self.emit("col_l2_normalize", rows, cols, data, tracked, |out| {
            Op::ColNormalize(x2, out.detach(), norms)
        })
    }

    /// `out[i][j] = col[i] + row[j]` for `col: n x 1`, `row: 1 x m`.
    pub fn outer_sum(&mut self, col: &Tensor, row: &Tensor) -> Result<Tensor> {
        if col.cols() != 1 || row.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "outer_sum",
                left: col.shape(),
                right: row.shape(),
            });
        }
        let tracked = self.any_tracked(&[col, row])?;
        let (n, m) = (col.rows(), row.cols());
        let mut data = Vec::with_capacity(n * m);
        for &c in col.data() {
            for &r in row.data() {
                data.push(c + r);
            }
        }
        let (c2, r2) = (col.clone(), row.clone());
        self.emit("outer_sum", n, m, data, tracked, |_| Op::OuterSum(c2, r2))
    }

    /// Scores every ordered node pair with a two-layer perceptron over the
    /// pair encoding chosen by `mode`, returning an `n x n` matrix in `[0,1]`
    /// with a zero diagonal. Hidden activations are recomputed during the
    /// backward pass, so memory stays `O(n²)` in the output only.
    pub fn pair_mlp(&mut self, mode: PairMode, h: &Tensor, w: &PairMlpWeights) -> Result<Tensor> {
        let (n, d) = h.shape();
        let k = w.b1.cols();
        let ok = w.w_first.shape() == (d, k)
            && w.w_second.shape() == (d, k)
            && w.b1.shape() == (1, k)
            && w.w2.shape() == (k, 1)
            && w.b2.shape() == (1, 1);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "pair_mlp",
                left: h.shape(),
                right: w.w_first.shape(),
            });
        }
        let tracked = self.any_tracked(&[h, &w.w_first, &w.w_second, &w.b1, &w.w2, &w.b2])?;
        let data = pair::forward(mode, h, w);
        let (h2, w2) = (h.clone(), w.clone());
        self.emit("pair_mlp", n, n, data, tracked, |out| {
            Op::PairMlp(mode, h2, w2, out.detach())
        })
    }

    /// Reverse sweep from a scalar loss. Returns a gradient for every
    /// parameter registered with [`Tape::param`] (zeros when unreachable)
    /// and marks the tape consumed.
    pub fn backward(&mut self, loss: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if loss.shape() != (1, 1) {
            return Err(Error::NotScalar(loss.rows(), loss.cols()));
        }
        let root = match loss.node {
            Some(n) if n.tape == self.id => n.index,
            Some(_) => return Err(Error::ForeignTensor),
            None => return Err(Error::Untracked),
        };
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contribs = backward_node(node, &g);
            for (target, delta) in contribs {
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&delta) {
                            *a += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            }
            // leaves keep their gradient for collection below
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let mut out = BTreeMap::new();
        for (name, index) in &self.params {
            let node = &self.nodes[*index];
            let g = grads[*index]
                .clone()
                .unwrap_or_else(|| vec![0.0; node.rows * node.cols]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
            let t = Tensor::from_parts(node.rows, node.cols, g);
            match out.get_mut(name) {
                // the same name registered twice accumulates
                Some(existing) => {
                    let sum: Vec<f64> = Tensor::data(existing)
                        .iter()
                        .zip(t.data())
                        .map(|(a, b)| a + b)
                        .collect();
                    *existing = Tensor::from_parts(node.rows, node.cols, sum);
                }
                None => {
                    out.insert(name.clone(), t);
                }
            }
        }
        Ok(Gradients::from_map(out))
    }
}

fn target(t: &Tensor) -> Option<usize> {
    t.node.map(|n| n.index)
}

/// Local vector-Jacobian products of one node.
fn backward_node(node: &Node, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::with_capacity(2);
    let (rows, cols) = (node.rows, node.cols);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if let Some(t) = target(a) {
                out.push((t, kernels::matmul_nt(g, b.data(), rows, cols, a.cols())));
            }
            if let Some(t) = target(b) {
                out.push((t, kernels::matmul_tn(a.data(), g, a.rows(), a.cols(), cols)));
            }
        }
        Op::Binary(op, bc, a, b) => {
            let (ad, bd) = (a.data(), b.data());
            if let Some(t) = target(a) {
                let mut da = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * cols + j;
                        let y = bd[bc.index(i, j, cols)];
                        da[k] = match op {
                            BinaryOp::Add | BinaryOp::Sub => g[k],
                            BinaryOp::Mul => g[k] * y,
                            BinaryOp::Div => g[k] / y,
                        };
                    }
                }
                out.push((t, da));
            }
            if let Some(t) = target(b) {
                let mut db = vec![0.0; b.len()];
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * cols + j;
                        let bi = bc.index(i, j, cols);
                        let y = bd[bi];
                        db[bi] += match op {
                            BinaryOp::Add => g[k],
                            BinaryOp::Sub => -g[k],
                            BinaryOp::Mul => g[k] * ad[k],
                            BinaryOp::Div => -g[k] * ad[k] / (y * y),
                        };
                    }
                }
                out.push((t, db));
            }
        }
        Op::Scale(x, c) => {
            if let Some(t) = target(x) {
                out.push((t, g.iter().map(|v| v * c).collect()));
            }
        }
        Op::AddScalar(x) => {
            if let Some(t) = target(x) {
                out.push((t, g.to_vec()));
            }
        }
        Op::Unary(op, x, y) => {
            if let Some(t) = target(x) {
                let dx = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(g)
                    .map(|((&xv, &yv), &gv)| match op {
                        UnaryOp::Neg => -gv,
                        UnaryOp::Abs => {
                            if xv > 0.0 {
                                gv
                            } else if xv < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Log => {
                            if xv > CLAMP_MIN {
                                gv / xv
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Exp => gv * yv,
                        UnaryOp::Sqrt => {
                            if xv > CLAMP_MIN {
                                gv / (2.0 * yv)
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Relu => {
                            if xv > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::LeakyRelu(s) => {
                            if xv > 0.0 {
                                gv
                            } else {
                                s * gv
                            }
                        }
                        UnaryOp::Sigmoid => gv * yv * (1.0 - yv),
                    })
                    .collect();
                out.push((t, dx));
            }
        }
        Op::Softmax(x, y) => {
            if let Some(t) = target(x) {
                let yd = y.data();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let r = i * cols..(i + 1) * cols;
                    let mut dot = 0.0;
                    for (gv, yv) in g[r.clone()].iter().zip(&yd[r.clone()]) {
                        dot += gv * yv;
                    }
                    for k in r {
                        dx[k] = yd[k] * (g[k] - dot);
                    }
                }
                out.push((t, dx));
            }
        }
        Op::LogSoftmax(x, y) => {
            if let Some(t) = target(x) {
                let yd = y.data();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let r = i * cols..(i + 1) * cols;
                    let mut total = 0.0;
                    for gv in &g[r.clone()] {
                        total += gv;
                    }
                    for k in r {
                        dx[k] = g[k] - yd[k].exp() * total;
                    }
                }
                out.push((t, dx));
            }
        }
        Op::Reduce(kind, axis, x) => {
            if let Some(t) = target(x) {
                let (xr, xc) = x.shape();
                let xd = x.data();
                let count = match axis {
                    None => xr * xc,
                    Some(Axis::Cols) => xc,
                    Some(Axis::Rows) => xr,
                } as f64;
                let mut dx = vec![0.0; xr * xc];
                for i in 0..xr {
                    for j in 0..xc {
                        let k = i * xc + j;
                        let up = match axis {
                            None => g[0],
                            Some(Axis::Cols) => g[i],
                            Some(Axis::Rows) => g[j],
                        };
                        dx[k] = match kind {
                            Reduction::Sum => up,
                            Reduction::Mean => up / count,
                            Reduction::FrobeniusSq => 2.0 * xd[k] * up,
                        };
                    }
                }
                out.push((t, dx));
            }
        }
        Op::Transpose(x) => {
            if let Some(t) = target(x) {
                out.push((t, kernels::transpose(g, rows, cols)));
            }
        }
        Op::ConcatCols(a, b) => {
            let ac = a.cols();
            if let Some(t) = target(a) {
                let mut da = Vec::with_capacity(a.len());
                for i in 0..rows {
                    da.extend_from_slice(&g[i * cols..i * cols + ac]);
                }
                out.push((t, da));
            }
            if let Some(t) = target(b) {
                let mut db = Vec::with_capacity(b.len());
                for i in 0..rows {
                    db.extend_from_slice(&g[i * cols + ac..(i + 1) * cols]);
                }
                out.push((t, db));
            }
        }
        Op::GatherRows(x, idx) => {
            if let Some(t) = target(x) {
                let xc = x.cols();
                let mut dx = vec![0.0; x.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..xc {
                        dx[src * xc + c] += g[r * xc + c];
                    }
                }
                out.push((t, dx));
            }
        }
        Op::Reshape(x) => {
            if let Some(t) = target(x) {
                out.push((t, g.to_vec()));
            }
        }
        Op::RowNormalize(x, y, norms) => {
            if let Some(t) = target(x) {
                let yd = y.data();
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let r = i * cols..(i + 1) * cols;
                    let clamped = norms[i] <= CLAMP_MIN;
                    let mut dot = 0.0;
                    for (gv, yv) in g[r.clone()].iter().zip(&yd[r.clone()]) {
                        dot += gv * yv;
                    }
                    for k in r {
                        dx[k] = if clamped {
                            g[k] / norms[i]
                        } else {
                            (g[k] - yd[k] * dot) / norms[i]
                        };
                    }
                }
                out.push((t, dx));
            }
        }
        Op::ColNormalize(x, y, norms) => {
            if let Some(t) = target(x) {
                let yd = y.data();
                let mut dots = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        dots[j] += g[i * cols + j] * yd[i * cols + j];
                    }
                }
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * cols + j;
                        dx[k] = if norms[j] <= CLAMP_MIN {
                            g[k] / norms[j]
                        } else {
                            (g[k] - yd[k] * dots[j]) / norms[j]
                        };
                    }
                }
                out.push((t, dx));
            }
        }
        Op::OuterSum(c, r) => {
            if let Some(t) = target(c) {
                let mut dc = vec![0.0; rows];
                for (i, d) in dc.iter_mut().enumerate() {
                    for &gv in &g[i * cols..(i + 1) * cols] {
                        *d += gv;
                    }
                }
                out.push((t, dc));
            }
            if let Some(t) = target(r) {
                let mut dr = vec![0.0; cols];
                for i in 0..rows {
                    for (d, &gv) in dr.iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                        *d += gv;
                    }
                }
                out.push((t, dr));
            }
        }
        Op::PairMlp(mode, h, w, y) => {
            let grads = pair::backward(*mode, h, w, y, g);
            let inputs = [h, &w.w_first, &w.w_second, &w.b1, &w.w2, &w.b2];
            for (input, grad) in inputs.into_iter().zip(grads) {
                if let Some(t) = target(input) {
                    out.push((t, grad));
                }
            }
        }
    }
    out
}

mod pair {
    use super::{kernels, PairMlpWeights, PairMode, Tensor};

    /// Per-node projections shared by every pair.
    struct Prep {
        n: usize,
        d: usize,
        k: usize,
        /// `h · w_first`, n x k
        first: Vec<f64>,
        /// directed: `h · w_second`; symmetric: unused
        second: Vec<f64>,
        /// symmetric: `w_secondᵀ`, k x d
        second_t: Vec<f64>,
    }

    fn prepare(mode: PairMode, h: &Tensor, w: &PairMlpWeights) -> Prep {
        let (n, d) = h.shape();
        let k = w.b1.cols();
        let first = kernels::matmul(h.data(), w.w_first.data(), n, d, k);
        let (second, second_t) = match mode {
            PairMode::Directed => (kernels::matmul(h.data(), w.w_second.data(), n, d, k), Vec::new()),
            PairMode::Symmetric => (Vec::new(), kernels::transpose(w.w_second.data(), d, k)),
        };
        Prep {
            n,
            d,
            k,
            first,
            second,
            second_t,
        }
    }

    /// Hidden pre-activations of pair (u, v) into `pre`.
    #[inline]
    fn hidden(mode: PairMode, p: &Prep, h: &[f64], b1: &[f64], u: usize, v: usize, absd: &mut [f64], pre: &mut [f64]) {
        let (d, k) = (p.d, p.k);
        match mode {
            PairMode::Symmetric => {
                let (hu, hv) = (&h[u * d..(u + 1) * d], &h[v * d..(v + 1) * d]);
                for j in 0..d {
                    absd[j] = (hu[j] - hv[j]).abs();
                }
                for c in 0..k {
                    let wrow = &p.second_t[c * d..(c + 1) * d];
                    let mut acc = p.first[u * k + c] + p.first[v * k + c] + b1[c];
                    for (a, w) in absd.iter().zip(wrow) {
                        acc += a * w;
                    }
                    pre[c] = acc;
                }
            }
            PairMode::Directed => {
                for c in 0..k {
                    pre[c] = p.first[u * k + c] + p.second[v * k + c] + b1[c];
                }
            }
        }
    }

    pub(super) fn forward(mode: PairMode, h: &Tensor, w: &PairMlpWeights) -> Vec<f64> {
        let p = prepare(mode, h, w);
        let (n, k) = (p.n, p.k);
        let hd = h.data();
        let (b1, w2, b2) = (w.b1.data(), w.w2.data(), w.b2.data()[0]);
        let mut out = vec![0.0; n * n];
        let mut absd = vec![0.0; p.d];
        let mut pre = vec![0.0; k];
        for u in 0..n {
            let start = if mode == PairMode::Symmetric { u + 1 } else { 0 };
            for v in start..n {
                if u == v {
                    continue;
                }
                hidden(mode, &p, hd, b1, u, v, &mut absd, &mut pre);
                let mut score = b2;
                for c in 0..k {
                    if pre[c] > 0.0 {
                        score += pre[c] * w2[c];
                    }
                }
                let s = kernels::sigmoid(score);
                out[u * n + v] = s;
                if mode == PairMode::Symmetric {
                    out[v * n + u] = s;
                }
            }
        }
        out
    }

    /// Gradients for `[h, w_first, w_second, b1, w2, b2]`.
    pub(super) fn backward(mode: PairMode, h: &Tensor, w: &PairMlpWeights, y: &Tensor, g: &[f64]) -> [Vec<f64>; 6] {
        let p = prepare(mode, h, w);
        let (n, d, k) = (p.n, p.d, p.k);
        let hd = h.data();
        let yd = y.data();
        let (b1, w2) = (w.b1.data(), w.w2.data());
        let need_h = h.is_tracked();

        let mut d_first = vec![0.0; n * k];
        let mut d_second = vec![0.0; n * k];
        let mut d_wsecond = vec![0.0; d * k];
        let mut d_b1 = vec![0.0; k];
        let mut d_w2 = vec![0.0; k];
        let mut d_b2 = 0.0;
        let mut d_h = vec![0.0; n * d];

        let mut absd = vec![0.0; d];
        let mut pre = vec![0.0; k];
        let mut dpre = vec![0.0; k];
        for u in 0..n {
            let start = if mode == PairMode::Symmetric { u + 1 } else { 0 };
            for v in start..n {
                if u == v {
                    continue;
                }
                let upstream = match mode {
                    PairMode::Symmetric => g[u * n + v] + g[v * n + u],
                    PairMode::Directed => g[u * n + v],
                };
                if upstream == 0.0 {
                    continue;
                }
                let s = yd[u * n + v];
                let gs = upstream * s * (1.0 - s);
                hidden(mode, &p, hd, b1, u, v, &mut absd, &mut pre);
                d_b2 += gs;
                for c in 0..k {
                    if pre[c] > 0.0 {
                        d_w2[c] += gs * pre[c];
                        dpre[c] = gs * w2[c];
                    } else {
                        dpre[c] = 0.0;
                    }
                }
                for c in 0..k {
                    let dc = dpre[c];
                    if dc == 0.0 {
                        continue;
                    }
                    d_b1[c] += dc;
                    d_first[u * k + c] += dc;
                    match mode {
                        PairMode::Symmetric => {
                            d_first[v * k + c] += dc;
                            for j in 0..d {
                                d_wsecond[j * k + c] += dc * absd[j];
                            }
                        }
                        PairMode::Directed => d_second[v * k + c] += dc,
                    }
                }
                if need_h && mode == PairMode::Symmetric {
                    for j in 0..d {
                        let diff = hd[u * d + j] - hd[v * d + j];
                        if diff == 0.0 {
                            continue;
                        }
                        let wrow = &w.w_second.data()[j * k..(j + 1) * k];
                        let mut acc = 0.0;
                        for c in 0..k {
                            acc += dpre[c] * wrow[c];
                        }
                        let signed = if diff > 0.0 { acc } else { -acc };
                        d_h[u * d + j] += signed;
                        d_h[v * d + j] -= signed;
                    }
                }
            }
        }

        let d_wfirst = kernels::matmul_tn(hd, &d_first, n, d, k);
        if need_h {
            let from_first = kernels::matmul_nt(&d_first, w.w_first.data(), n, k, d);
            for (a, b) in d_h.iter_mut().zip(from_first) {
                *a += b;
            }
        }
        if mode == PairMode::Directed {
            d_wsecond = kernels::matmul_tn(hd, &d_second, n, d, k);
            if need_h {
                let from_second = kernels::matmul_nt(&d_second, w.w_second.data(), n, k, d);
                for (a, b) in d_h.iter_mut().zip(from_second) {
                    *a += b;
                }
            }
        }
        [d_h, d_wfirst, d_wsecond, d_b1, d_w2, vec![d_b2]]
    }
}
