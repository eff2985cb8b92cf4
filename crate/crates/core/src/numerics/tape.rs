//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output value. Nodes are appended in evaluation order, so the record is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep that visits each node at most once.
//!
//! Operations are coarse (whole-matrix) so a full model day is a few hundred
//! nodes rather than one node per scalar.

use std::collections::BTreeMap;

use super::tensor::{matmul_dims, matmul_into, matmul_nt_into, matmul_tn_into};
use super::{Params, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation tags, used for diagnostics and for fault injection in
/// gradient-check sentinels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulNt,
    Add,
    Sub,
    Mul,
    AddRow,
    MulCol,
    Scale,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Exp,
    LnClamped,
    ConcatCols,
    SliceRows,
    Slice,
    Concat,
    GatherRows,
    SegmentSum,
    SegmentSoftmax,
    MaskedSoftmax,
    MaskedSoftmaxRows,
    BroadcastRows,
    SelectCol,
    SumAll,
    MeanRows,
    Dot,
    RowOuter,
    SoftmaxRows,
    Pick,
    Reshape,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<OpKind> {
        use OpKind::*;
        let all = [
            Leaf, MatMul, MatMulNt, Add, Sub, Mul, AddRow, MulCol, Scale, Tanh, Sigmoid, LeakyRelu,
            Exp, LnClamped, ConcatCols, SliceRows, Slice, Concat, GatherRows, SegmentSum,
            SegmentSoftmax, MaskedSoftmax, MaskedSoftmaxRows, BroadcastRows, SelectCol, SumAll,
            MeanRows, Dot, RowOuter, SoftmaxRows, Pick, Reshape,
        ];
        all.into_iter()
            .find(|k| format!("{k:?}").eq_ignore_ascii_case(name))
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Exp(Var),
    LnClamped(Var, T),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    Slice(Var, usize),
    Concat(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    MaskedSoftmax(Var, Vec<bool>),
    MaskedSoftmaxRows(Var, Vec<bool>),
    BroadcastRows(Var),
    SelectCol(Var, usize),
    SumAll(Var),
    MeanRows(Var),
    Dot(Var, Var),
    RowOuter(Var, Var),
    SoftmaxRows(Var),
    Pick(Var, Vec<usize>),
    Reshape(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulCol(..) => OpKind::MulCol,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Exp(..) => OpKind::Exp,
            Op::LnClamped(..) => OpKind::LnClamped,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::Slice(..) => OpKind::Slice,
            Op::Concat(..) => OpKind::Concat,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::SegmentSum(..) => OpKind::SegmentSum,
            Op::SegmentSoftmax(..) => OpKind::SegmentSoftmax,
            Op::MaskedSoftmax(..) => OpKind::MaskedSoftmax,
            Op::MaskedSoftmaxRows(..) => OpKind::MaskedSoftmaxRows,
            Op::BroadcastRows(..) => OpKind::BroadcastRows,
            Op::SelectCol(..) => OpKind::SelectCol,
            Op::SumAll(..) => OpKind::SumAll,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::Dot(..) => OpKind::Dot,
            Op::RowOuter(..) => OpKind::RowOuter,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::Pick(..) => OpKind::Pick,
            Op::Reshape(..) => OpKind::Reshape,
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only computation record.
///
/// Confined to one thread; build a fresh tape per forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every named parameter leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.grads.insert(name.into(), grad);
    }

    /// Adds zero gradients for parameters absent from this set.
    pub fn complete_for(&mut self, params: &Params<T>) {
        for (name, p) in params.iter() {
            self.grads
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            fault: None,
        }
    }

    /// Test sentinel: scales the backward rule of one op kind by 1.5 so
    /// gradient checks are shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers a named parameter leaf. Registering the same name twice
    /// returns the existing node.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let shape = if self.value(b).rank() == 1 { vec![m] } else { vec![m, n] };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [n, k2]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::dim("matmul_nt", sa, sb)),
        };
        let mut out = vec![T::zero(); m * n];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds a length-n vector to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (m, n) = ta.rows_cols();
        if ta.rank() != 2 || tb.rank() != 1 || tb.len() != n {
            return Err(Error::dim("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for (x, &b) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, bias)))
    }

    /// Scales row i of `a` by `w[i]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        let (m, n) = ta.rows_cols();
        if tw.rank() != 1 || tw.len() != m || ta.rank() == 0 {
            return Err(Error::dim("mul_col", ta.shape(), tw.shape()));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            let s = tw.data()[i];
            for x in &mut data[i * n..(i + 1) * n] {
                *x *= s;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulCol(a, w)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, c))
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// `max(x, slope·x)`. At exactly 0 the derivative taken is `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), move |x| leaky_relu(x, slope))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    /// `ln(max(x, floor))`; no gradient flows where the floor is active.
    pub fn ln_clamped(&mut self, a: Var, floor: T) -> Var {
        self.map(a, Op::LnClamped(a, floor), move |x| x.max(floor).ln())
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::dim("concat_cols", ta.shape(), tb.shape()));
        }
        let (m, p) = ta.rows_cols();
        let q = tb.shape()[1];
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let t = Tensor::new(vec![m, p + q], data)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        if ta.rank() != 2 || start + len > m || len == 0 {
            return Err(Error::dim("slice_rows", ta.shape(), &[start, len]));
        }
        let data = ta.data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::new(vec![len, n], data)?;
        Ok(self.push(t, Op::SliceRows(a, start)))
    }

    /// Elements `start..start+len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || start + len > ta.len() || len == 0 {
            return Err(Error::dim("slice", ta.shape(), &[start, len]));
        }
        let t = Tensor::vector(ta.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice(a, start)))
    }

    /// Concatenates scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero parts"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() > 1 {
                return Err(Error::dim("concat", tp.shape(), &[]));
            }
            data.extend_from_slice(tp.data());
        }
        let t = Tensor::vector(data);
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Row `idx[e]` of `a` for each e. A vector gathers elements.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        if idx.is_empty() || ta.rank() == 0 || idx.iter().any(|&i| i >= m) {
            return Err(Error::contract(format!(
                "gather_rows: {} indices into {:?}",
                idx.len(),
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(ta.row(i));
        }
        let shape = if ta.rank() == 1 { vec![idx.len()] } else { vec![idx.len(), n] };
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec())))
    }

    /// Sums rows of `a` into `segments` buckets: `out[seg[e]] += a[e]`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        if seg.len() != m || seg.iter().any(|&s| s >= segments) || segments == 0 {
            return Err(Error::dim("segment_sum", ta.shape(), &[seg.len(), segments]));
        }
        let mut data = vec![T::zero(); segments * n];
        for (e, &s) in seg.iter().enumerate() {
            for (o, &x) in data[s * n..(s + 1) * n].iter_mut().zip(ta.row(e)) {
                *o += x;
            }
        }
        let shape = if ta.rank() == 1 { vec![segments] } else { vec![segments, n] };
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::SegmentSum(a, seg.to_vec())))
    }

    /// Softmax of a score vector within each segment (max-subtracted).
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || seg.len() != ta.len() {
            return Err(Error::dim("segment_softmax", ta.shape(), &[seg.len()]));
        }
        let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![T::neg_infinity(); segments];
        for (&x, &s) in ta.data().iter().zip(seg) {
            if x > max[s] {
                max[s] = x;
            }
        }
        let mut out: Vec<T> = ta
            .data()
            .iter()
            .zip(seg)
            .map(|(&x, &s)| (x - max[s]).exp())
            .collect();
        let mut sum = vec![T::zero(); segments];
        for (&e, &s) in out.iter().zip(seg) {
            sum[s] += e;
        }
        for (e, &s) in out.iter_mut().zip(seg) {
            *e /= sum[s];
        }
        let t = Tensor::vector(out);
        Ok(self.push(t, Op::SegmentSoftmax(a, seg.to_vec())))
    }

    /// Softmax over the entries where `mask` is true; masked-out entries
    /// are exactly zero. Returns `(probabilities, empty_support)`; with an
    /// all-false mask the output is all zeros and the flag is set.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<(Var, bool)> {
        let ta = self.value(a);
        if ta.rank() != 1 || mask.len() != ta.len() {
            return Err(Error::dim("masked_softmax", ta.shape(), &[mask.len()]));
        }
        let out = masked_softmax_slice(ta.data(), mask);
        let empty = !mask.iter().any(|&m| m);
        let t = Tensor::vector(out);
        Ok((self.push(t, Op::MaskedSoftmax(a, mask.to_vec())), empty))
    }

    /// Row-wise masked softmax of an m×n matrix with an m×n mask
    /// (row-major). Fully masked rows are zero.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        if ta.rank() != 2 || mask.len() != m * n {
            return Err(Error::dim("masked_softmax_rows", ta.shape(), &[mask.len()]));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(masked_softmax_slice(ta.row(i), &mask[i * n..(i + 1) * n]));
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MaskedSoftmaxRows(a, mask.to_vec())))
    }

    /// Repeats a vector as `rows` identical rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || rows == 0 {
            return Err(Error::dim("broadcast_rows", ta.shape(), &[rows]));
        }
        let n = ta.len();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(ta.data());
        }
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(t, Op::BroadcastRows(a)))
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        if ta.rank() != 2 || col >= n {
            return Err(Error::dim("select_col", ta.shape(), &[col]));
        }
        let data = (0..m).map(|i| ta.data()[i * n + col]).collect();
        let t = Tensor::vector(data);
        Ok(self.push(t, Op::SelectCol(a, col)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Column means of an m×n matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::dim("mean_rows", ta.shape(), &[]));
        }
        let (m, n) = ta.rows_cols();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &x) in out.iter_mut().zip(ta.row(i)) {
                *o += x;
            }
        }
        let inv = T::one() / T::of(m as f64);
        for o in &mut out {
            *o *= inv;
        }
        let t = Tensor::vector(out);
        Ok(self.push(t, Op::MeanRows(a)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || ta.shape() != tb.shape() {
            return Err(Error::dim("dot", ta.shape(), tb.shape()));
        }
        let s = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Per-row outer product: `a: [m×p]`, `b: [m×q]` → `[m×(p·q)]` with
    /// column index `i·q + j` holding `a[·,i]·b[·,j]`.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::dim("row_outer", ta.shape(), tb.shape()));
        }
        let (m, p) = ta.rows_cols();
        let q = tb.shape()[1];
        let mut data = Vec::with_capacity(m * p * q);
        for r in 0..m {
            let (ra, rb) = (ta.row(r), tb.row(r));
            for &x in ra {
                for &y in rb {
                    data.push(x * y);
                }
            }
        }
        let t = Tensor::new(vec![m, p * q], data)?;
        Ok(self.push(t, Op::RowOuter(a, b)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::dim("softmax_rows", ta.shape(), &[]));
        }
        let (m, n) = ta.rows_cols();
        let mask = vec![true; n];
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(masked_softmax_slice(ta.row(i), &mask));
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::SoftmaxRows(a)))
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        if ta.rank() != 2 || idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::dim("pick", ta.shape(), &[idx.len()]));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| ta.data()[i * n + j]).collect();
        let t = Tensor::vector(data);
        Ok(self.push(t, Op::Pick(a, idx.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Gradients of the scalar `root` with respect to every registered
    /// parameter. Parameters the root does not depend on get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                rt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let g = if self.fault == Some(node.op.kind()) {
                g.iter().map(|&x| x * T::of(1.5)).collect()
            } else {
                g
            };
            self.propagate(node, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (name, &v) in &self.params {
            let shape = self.value(v).shape();
            let g = match grads.get(v.0).and_then(|g| g.clone()) {
                Some(data) => Tensor::new(shape.to_vec(), data)?,
                None => Tensor::zeros(shape),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n) = matmul_dims(val(*a).shape(), val(*b).shape()).expect("checked");
                let ga = acc(grads, *a, val(*a).len());
                // dA = G · Bᵀ
                matmul_nt_into(g, val(*b).data(), ga, m, n, k);
                let gb = acc(grads, *b, val(*b).len());
                // dB = Aᵀ · G
                matmul_tn_into(val(*a).data(), g, gb, m, k, n);
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(*a).rows_cols();
                let n = val(*b).shape()[0];
                let ga = acc(grads, *a, m * k);
                // dA = G · B
                matmul_into(g, val(*b).data(), ga, m, n, k);
                let gb = acc(grads, *b, n * k);
                // dB = Gᵀ · A
                matmul_tn_into(g, val(*a).data(), gb, m, n, k);
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                for (o, &x) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                    *o -= x;
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                for ((o, &x), &bv) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(db) {
                    *o += x * bv;
                }
                for ((o, &x), &av) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(da) {
                    *o += x * av;
                }
            }
            Op::AddRow(a, bias) => {
                add_into(acc(grads, *a, g.len()), g);
                let n = val(*bias).len();
                let gb = acc(grads, *bias, n);
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::MulCol(a, w) => {
                let (m, n) = val(*a).rows_cols();
                let (da, dw) = (val(*a).data(), val(*w).data());
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[i * n + j] * dw[i];
                    }
                }
                let gw = acc(grads, *w, m);
                for i in 0..m {
                    let mut s = T::zero();
                    for j in 0..n {
                        s += g[i * n + j] * da[i * n + j];
                    }
                    gw[i] += s;
                }
            }
            Op::Scale(a, c) => {
                for (o, &x) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *o += x * *c;
                }
            }
            Op::Tanh(a) => {
                for ((o, &x), &t) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *o += x * (T::one() - t * t);
                }
            }
            Op::Sigmoid(a) => {
                for ((o, &x), &s) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *o += x * s * (T::one() - s);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let da = val(*a).data();
                for ((o, &x), &inp) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(da) {
                    *o += if inp > T::zero() { x } else { x * *slope };
                }
            }
            Op::Exp(a) => {
                for ((o, &x), &e) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *o += x * e;
                }
            }
            Op::LnClamped(a, floor) => {
                let da = val(*a).data();
                for ((o, &x), &inp) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(da) {
                    if inp > *floor {
                        *o += x / inp;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = val(*a).rows_cols();
                let q = val(*b).shape()[1];
                {
                    let ga = acc(grads, *a, m * p);
                    for i in 0..m {
                        add_into(&mut ga[i * p..(i + 1) * p], &g[i * (p + q)..i * (p + q) + p]);
                    }
                }
                let gb = acc(grads, *b, m * q);
                for i in 0..m {
                    add_into(&mut gb[i * q..(i + 1) * q], &g[i * (p + q) + p..(i + 1) * (p + q)]);
                }
            }
            Op::SliceRows(a, start) => {
                let n = val(*a).rows_cols().1;
                let ga = acc(grads, *a, val(*a).len());
                add_into(&mut ga[start * n..start * n + g.len()], g);
            }
            Op::Slice(a, start) => {
                let ga = acc(grads, *a, val(*a).len());
                add_into(&mut ga[*start..*start + g.len()], g);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    add_into(acc(grads, p, len), &g[off..off + len]);
                    off += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let n = val(*a).rows_cols().1;
                let ga = acc(grads, *a, val(*a).len());
                for (e, &i) in idx.iter().enumerate() {
                    add_into(&mut ga[i * n..(i + 1) * n], &g[e * n..(e + 1) * n]);
                }
            }
            Op::SegmentSum(a, seg) => {
                let n = val(*a).rows_cols().1;
                let ga = acc(grads, *a, val(*a).len());
                for (e, &s) in seg.iter().enumerate() {
                    add_into(&mut ga[e * n..(e + 1) * n], &g[s * n..(s + 1) * n]);
                }
            }
            Op::SegmentSoftmax(a, seg) => {
                let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![T::zero(); segments];
                for ((&gi, &yi), &s) in g.iter().zip(y).zip(seg) {
                    inner[s] += gi * yi;
                }
                let ga = acc(grads, *a, g.len());
                for (e, &s) in seg.iter().enumerate() {
                    ga[e] += y[e] * (g[e] - inner[s]);
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let ga = acc(grads, *a, g.len());
                softmax_backward(ga, g, y, mask);
            }
            Op::MaskedSoftmaxRows(a, mask) => {
                let (m, n) = val(*a).rows_cols();
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    softmax_backward(&mut ga[r.clone()], &g[r.clone()], &y[r.clone()], &mask[r]);
                }
            }
            Op::BroadcastRows(a) => {
                let n = val(*a).len();
                let ga = acc(grads, *a, n);
                for row in g.chunks(n) {
                    add_into(ga, row);
                }
            }
            Op::SelectCol(a, col) => {
                let (m, n) = val(*a).rows_cols();
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    ga[i * n + col] += g[i];
                }
            }
            Op::SumAll(a) => {
                let ga = acc(grads, *a, val(*a).len());
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }
            Op::MeanRows(a) => {
                let (m, n) = val(*a).rows_cols();
                let inv = T::one() / T::of(m as f64);
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j] * inv;
                    }
                }
            }
            Op::Dot(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                for (o, &bv) in acc(grads, *a, da.len()).iter_mut().zip(db) {
                    *o += g[0] * bv;
                }
                for (o, &av) in acc(grads, *b, db.len()).iter_mut().zip(da) {
                    *o += g[0] * av;
                }
            }
            Op::RowOuter(a, b) => {
                let (m, p) = val(*a).rows_cols();
                let q = val(*b).shape()[1];
                let (da, db) = (val(*a).data(), val(*b).data());
                {
                    let ga = acc(grads, *a, m * p);
                    for r in 0..m {
                        for i in 0..p {
                            let mut s = T::zero();
                            for j in 0..q {
                                s += g[r * p * q + i * q + j] * db[r * q + j];
                            }
                            ga[r * p + i] += s;
                        }
                    }
                }
                let gb = acc(grads, *b, m * q);
                for r in 0..m {
                    for i in 0..p {
                        let av = da[r * p + i];
                        for j in 0..q {
                            gb[r * q + j] += g[r * p * q + i * q + j] * av;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = val(*a).rows_cols();
                let mask = vec![true; n];
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    softmax_backward(&mut ga[r.clone()], &g[r.clone()], &y[r], &mask);
                }
            }
            Op::Pick(a, idx) => {
                let (m, n) = val(*a).rows_cols();
                let ga = acc(grads, *a, m * n);
                for (i, &j) in idx.iter().enumerate() {
                    ga[i * n + j] += g[i];
                }
            }
            Op::Reshape(a) => {
                add_into(acc(grads, *a, g.len()), g);
            }
        }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_backward<T: Scalar>(ga: &mut [T], g: &[T], y: &[T], mask: &[bool]) {
    let inner: T = g
        .iter()
        .zip(y)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&gi, &yi), _)| gi * yi)
        .sum();
    for i in 0..g.len() {
        if mask[i] {
            ga[i] += y[i] * (g[i] - inner);
        }
    }
}

pub(crate) fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

pub(crate) fn masked_softmax_slice<T: Scalar>(x: &[T], mask: &[bool]) -> Vec<T> {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return vec![T::zero(); x.len()];
    }
    let mut out: Vec<T> = x
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { T::zero() })
        .collect();
    let sum: T = out.iter().copied().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}
