//! Reverse-mode accumulation over a recorded sequence of matrix operations.
//!
//! A [`Tape`] owns every value computed during a forward pass. Operations
//! whose inputs all lack `requires_grad` are evaluated but not recorded, so
//! frozen computations (the momentum key encoder, evaluation passes) never
//! contribute to gradients. [`Tape::backward`] replays the record in exact
//! reverse order and adds the result into per-node gradient slots, so
//! repeated calls accumulate.

use crate::error::{NumError, Result};
use crate::param::Param;
use crate::tensor::{dot, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    LogSumExpRows(Var),
    NormalizeRows(Var, T),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded forward computation plus accumulated gradients.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    verify: bool,
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            verify: false,
            signature: FNV_OFFSET,
        }
    }

    /// A tape that rejects non-finite operands.
    pub fn verifying() -> Self {
        Self {
            verify: true,
            ..Self::new()
        }
    }

    pub fn is_verifying(&self) -> bool {
        self.verify
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every data-dependent branch taken so far (relu masks, clamp
    /// masks, explicit [`Tape::note_branch`] calls). Two evaluations with
    /// equal signatures went through the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        self.signature
    }

    pub fn note_branch(&mut self, tag: u64) {
        self.mix(tag);
    }

    fn mix(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.signature ^= u64::from(b);
            self.signature = self.signature.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient; the zero grid for nodes not reached by any
    /// backward pass.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let val = &self.nodes[v.0].value;
                Tensor::zeros(val.rows(), val.cols())
            }
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, p: &Param<T>) -> Var {
        self.leaf(p.value.clone(), p.requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn check_finite(&self, op: &'static str, inputs: &[Var]) -> Result<()> {
        if self.verify && inputs.iter().any(|i| !self.nodes[i.0].value.is_finite()) {
            return Err(NumError::NonFinite { op });
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(NumError::ShapeMismatch {
                op,
                left: x.shape(),
                right: y.shape(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, op_name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        self.check_finite(op_name, &[a])?;
        let value = self.nodes[a.0].value.map(f);
        Ok(self.push(value, op, &[a]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("matmul", &[a, b])?;
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.check_finite("add", &[a, b])?;
        let value = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                left: x.shape(),
                right: r.shape(),
            });
        }
        self.check_finite("add_row", &[a, row])?;
        let mut value = x.clone();
        let rv = r.data().to_vec();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.check_finite("sub", &[a, b])?;
        let value = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.check_finite("mul", &[a, b])?;
        let value = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (&self.nodes[a.0].value, &self.nodes[col.0].value);
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(NumError::ShapeMismatch {
                op: "mul_col",
                left: x.shape(),
                right: c.shape(),
            });
        }
        self.check_finite("mul_col", &[a, col])?;
        let mut value = x.clone();
        for i in 0..value.rows() {
            let s = c.data()[i];
            for o in value.row_mut(i) {
                *o *= s;
            }
        }
        Ok(self.push(value, Op::MulCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Rectifier; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.unary("relu", a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))?;
        self.mix_mask(a, |x| x > T::zero());
        Ok(out)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary("sin", a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary("cos", a, |x| x.cos(), Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input lies
    /// inside the interval.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(NumError::Invalid {
                op: "clamp",
                msg: format!("empty interval [{lo}, {hi}]"),
            });
        }
        let out = self.unary("clamp", a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))?;
        self.mix_mask(a, |x| x >= lo && x <= hi);
        Ok(out)
    }

    fn mix_mask(&mut self, a: Var, pred: impl Fn(T) -> bool) {
        let mut h = FNV_OFFSET;
        for &x in self.nodes[a.0].value.data() {
            h ^= u64::from(pred(x));
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.mix(h);
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NumError::Invalid {
                op: "concat_cols",
                msg: "no operands".into(),
            });
        };
        let rows = self.nodes[first.0].value.rows();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.nodes[first.0].value.shape(),
                    right: v.shape(),
                });
            }
        }
        self.check_finite("concat_cols", parts)?;
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NumError::Invalid {
                op: "concat_rows",
                msg: "no operands".into(),
            });
        };
        let cols = self.nodes[first.0].value.cols();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.cols() != cols {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.nodes[first.0].value.shape(),
                    right: v.shape(),
                });
            }
        }
        self.check_finite("concat_rows", parts)?;
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if start + len > x.cols() {
            return Err(NumError::ShapeMismatch {
                op: "slice_cols",
                left: x.shape(),
                right: vec![start, len],
            });
        }
        self.check_finite("slice_cols", &[a])?;
        let value = Tensor::from_fn(x.rows(), len, |r, c| x.get(r, start + c));
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if start + len > x.rows() {
            return Err(NumError::ShapeMismatch {
                op: "slice_rows",
                left: x.shape(),
                right: vec![start, len],
            });
        }
        self.check_finite("slice_rows", &[a])?;
        let c = x.cols();
        let value = Tensor::new(len, c, x.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    /// Output row `i` is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(NumError::ShapeMismatch {
                op: "gather_rows",
                left: x.shape(),
                right: vec![bad],
            });
        }
        self.check_finite("gather_rows", &[a])?;
        let c = x.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let value = Tensor::new(idx.len(), c, data)?;
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    /// Sums the rows of `a` into `segments` buckets; row `i` goes to `seg[i]`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if seg.len() != x.rows() || seg.iter().any(|&s| s >= segments) {
            return Err(NumError::ShapeMismatch {
                op: "segment_sum",
                left: x.shape(),
                right: vec![seg.len(), segments],
            });
        }
        self.check_finite("segment_sum", &[a])?;
        let mut value = Tensor::zeros(segments, x.cols());
        for (i, &s) in seg.iter().enumerate() {
            for (o, &v) in value.row_mut(s).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        Ok(self.push(value, Op::SegmentSum(a, seg.to_vec()), &[a]))
    }

    /// Softmax of a column vector taken separately within each segment.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if x.cols() != 1 || seg.len() != x.rows() || seg.iter().any(|&s| s >= segments) {
            return Err(NumError::ShapeMismatch {
                op: "segment_softmax",
                left: x.shape(),
                right: vec![seg.len(), segments],
            });
        }
        self.check_finite("segment_softmax", &[a])?;
        let mut max = vec![T::neg_infinity(); segments];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x.data()[i]);
        }
        let mut out: Vec<T> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| (x.data()[i] - max[s]).exp())
            .collect();
        let mut denom = vec![T::zero(); segments];
        for (i, &s) in seg.iter().enumerate() {
            denom[s] += out[i];
        }
        for (i, &s) in seg.iter().enumerate() {
            out[i] /= denom[s];
        }
        let value = Tensor::col_vector(out);
        Ok(self.push(value, Op::SegmentSoftmax(a, seg.to_vec()), &[a]))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.check_finite("sum_cols", &[a])?;
        let x = &self.nodes[a.0].value;
        let value = Tensor::col_vector((0..x.rows()).map(|r| x.row(r).iter().copied().sum()).collect());
        Ok(self.push(value, Op::SumCols(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_finite("sum", &[a])?;
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        Ok(self.push(value, Op::SumAll(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_finite("mean", &[a])?;
        let x = &self.nodes[a.0].value;
        if x.is_empty() {
            return Err(NumError::Invalid {
                op: "mean",
                msg: "mean of an empty tensor".into(),
            });
        }
        let value = Tensor::scalar(x.sum() / T::of(x.len() as f64));
        Ok(self.push(value, Op::MeanAll(a), &[a]))
    }

    /// Per-row log-sum-exp: `r x c -> r x 1`.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        self.check_finite("logsumexp", &[a])?;
        let x = &self.nodes[a.0].value;
        let value = Tensor::col_vector((0..x.rows()).map(|r| logsumexp_slice(x.row(r))).collect());
        Ok(self.push(value, Op::LogSumExpRows(a), &[a]))
    }

    /// Divides each row by `max(norm, eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        self.check_finite("normalize_rows", &[a])?;
        let mut value = self.nodes[a.0].value.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = dot(row, row).sqrt().max(eps);
            for v in row {
                *v /= n;
            }
        }
        Ok(self.push(value, Op::NormalizeRows(a, eps), &[a]))
    }

    /// `x W + b` with `b` a `1 x out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != [1, 1] {
            return Err(NumError::NonScalarLoss(shape));
        }
        let mut buf: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        buf[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = buf[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut buf);
            }
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Clears accumulated gradients but keeps recorded values.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, buf: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, d: Tensor<T>| {
            if !needs(v) {
                return;
            }
            match &mut buf[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    send(*a, g.matmul_nt(val(*b)).expect("shapes checked in forward"));
                }
                if needs(*b) {
                    send(*b, val(*a).matmul_tn(g).expect("shapes checked in forward"));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if needs(*row) {
                    let mut d = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in d.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*row, d);
                }
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |x, y| x * y));
                send(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::MulCol(a, col) => {
                let (x, c) = (val(*a), val(*col));
                if needs(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let s = c.data()[r];
                        d.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    send(*a, d);
                }
                if needs(*col) {
                    let d = Tensor::col_vector((0..g.rows()).map(|r| dot(g.row(r), x.row(r))).collect());
                    send(*col, d);
                }
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * *c)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Sigmoid(a) => send(*a, g.zip_map(&node.value, |d, y| d * y * (T::one() - y))),
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |d, x| if x > T::zero() { d } else { T::zero() })),
            Op::Tanh(a) => send(*a, g.zip_map(&node.value, |d, y| d * (T::one() - y * y))),
            Op::Sin(a) => send(*a, g.zip_map(val(*a), |d, x| d * x.cos())),
            Op::Cos(a) => send(*a, g.zip_map(val(*a), |d, x| -d * x.sin())),
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |d, y| d * y)),
            Op::Log(a) => send(*a, g.zip_map(val(*a), |d, x| d / x)),
            Op::Clamp(a, lo, hi) => send(
                *a,
                g.zip_map(val(*a), |d, x| if x >= *lo && x <= *hi { d } else { T::zero() }),
            ),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        send(p, Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c)));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for &p in parts {
                    let h = val(p).rows();
                    if needs(p) {
                        let d = Tensor::new(h, c, g.data()[offset * c..(offset + h) * c].to_vec())
                            .expect("shapes checked in forward");
                        send(p, d);
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                send(*a, d);
            }
            Op::SliceRows(a, start) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                let c = x.cols();
                d.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                send(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                send(*a, d);
            }
            Op::SegmentSum(a, seg) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for (r, &s) in seg.iter().enumerate() {
                    d.row_mut(r).copy_from_slice(g.row(s));
                }
                send(*a, d);
            }
            Op::SegmentSoftmax(a, seg) => {
                let y = node.value.data();
                let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![T::zero(); segments];
                for (i, &s) in seg.iter().enumerate() {
                    inner[s] += y[i] * g.data()[i];
                }
                let d = Tensor::col_vector(
                    seg.iter()
                        .enumerate()
                        .map(|(i, &s)| y[i] * (g.data()[i] - inner[s]))
                        .collect(),
                );
                send(*a, d);
            }
            Op::SumCols(a) => {
                let x = val(*a);
                send(*a, Tensor::from_fn(x.rows(), x.cols(), |r, _| g.data()[r]));
            }
            Op::SumAll(a) => {
                let x = val(*a);
                send(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let n = T::of(x.len() as f64);
                send(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0] / n));
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let d = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                    g.data()[r] * (x.get(r, c) - node.value.data()[r]).exp()
                });
                send(*a, d);
            }
            Op::NormalizeRows(a, eps) => {
                let x = val(*a);
                let y = &node.value;
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = dot(x.row(r), x.row(r)).sqrt();
                    let gr = g.row(r);
                    if norm > *eps {
                        let yg = dot(y.row(r), gr);
                        for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr).zip(y.row(r)) {
                            *o = (gv - yv * yg) / norm;
                        }
                    } else {
                        for (o, &gv) in d.row_mut(r).iter_mut().zip(gr) {
                            *o = gv / *eps;
                        }
                    }
                }
                send(*a, d);
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn logsumexp_slice<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half_with_quarter_slope() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0), true);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), Some(0.5));
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), Some(0.25));
    }

    #[test]
    fn product_rule_for_sum_of_product() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[vec![1.0, -2.0], vec![3.5, 0.25]]), true);
        let b = tape.leaf(t(&[vec![4.0, 0.5], vec![-1.0, 2.0]]), true);
        let p = tape.mul(a, b).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a), tape.value(b).clone());
        assert_eq!(tape.grad(b), tape.value(a).clone());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), Some(12.0));
    }

    #[test]
    fn unreached_nodes_have_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let unused = tape.leaf(t(&[vec![1.0, 2.0]]), true);
        let side = tape.exp(unused).unwrap();
        let y = tape.sin(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(unused), Tensor::zeros(1, 2));
        assert_eq!(tape.grad(side), Tensor::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(2, 1), true);
        assert_eq!(tape.backward(x), Err(NumError::NonScalarLoss(vec![2, 1])));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        match tape.matmul(a, b) {
            Err(NumError::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "matmul");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn verification_mode_rejects_non_finite() {
        let mut tape = Tape::<f64>::verifying();
        let a = tape.constant(Tensor::scalar(f64::NAN));
        assert_eq!(tape.exp(a), Err(NumError::NonFinite { op: "exp" }));
        let mut lax = Tape::<f64>::new();
        let a = lax.constant(Tensor::scalar(f64::NAN));
        assert!(lax.exp(a).is_ok());
    }

    #[test]
    fn constant_ops_are_not_recorded() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::ones(2, 2));
        let b = tape.exp(a).unwrap();
        assert!(!tape.requires_grad(b));
    }

    #[test]
    fn logsumexp_of_equal_entries() {
        let mut tape = Tape::<f64>::new();
        let c = 1.7;
        let a = tape.constant(Tensor::row_vector(vec![c; 3]));
        let l = tape.logsumexp(a).unwrap();
        // ln(3) from a direct 64-bit evaluation.
        let oracle = c + 3.0f64.ln();
        assert!((tape.value(l).item().unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn relu_gradient_zero_at_kink() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::row_vector(vec![0.0, 1.0, -1.0]), true);
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_then_slice_routes_gradients_disjointly() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[vec![1.0], vec![2.0]]), true);
        let b = tape.leaf(t(&[vec![3.0, 4.0], vec![5.0, 6.0]]), true);
        let cat = tape.concat_cols(&[a, b]).unwrap();
        let back = tape.slice_cols(cat, 1, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
        let s = tape.sum(back).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a), Tensor::zeros(2, 1));
        assert_eq!(tape.grad(b), Tensor::ones(2, 2));
    }

    #[test]
    fn segment_softmax_sums_to_one_per_segment() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::col_vector(vec![0.3, -1.0, 2.0, 5.0, 5.0]));
        let y = tape.segment_softmax(x, &[0, 0, 0, 1, 1], 2).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-12);
        assert_eq!(v[3], 0.5);
        assert_eq!(v[4], 0.5);
    }
}
