use num_traits::Float;

use super::tensor::{mm, mm_nt, mm_tn};
use super::{KernelError, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MeanTime(Var),
    Downsample(Var, usize),
    Upsample(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    ShiftRows(Var, isize),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Mse(Var, Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Eager computation record: every op computes its value immediately and, when any
/// operand requires a gradient, is remembered for reverse-mode accumulation.
///
/// Nodes are appended in evaluation order, so index order is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of a scalar with respect to the leaves that required them.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err<T: Real>(op: &'static str, ts: &[&Tensor<T>]) -> KernelError {
    KernelError::Shape {
        op,
        shapes: ts.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).item()
    }

    /// Leaf that accumulates a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Leaf that does not.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push_raw(value, op, rg)
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize), KernelError> {
        let t = self.value(v);
        if t.is_matrix() {
            Ok((t.shape()[0], t.shape()[1]))
        } else {
            Err(shape_err(op, &[t]))
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(())
        } else {
            Err(shape_err(op, &[ta, tb]))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", &[self.value(a), self.value(b)]));
        }
        let data = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), &[a, b]))
    }

    /// `x @ w + bias`, with `bias` of shape `[1, n]` added to every row.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, KernelError> {
        let (m, k) = self.mat(x, "affine")?;
        let (k2, n) = self.mat(w, "affine")?;
        let bshape = self.value(bias).shape();
        if k != k2 || bshape != [1, n] {
            return Err(shape_err(
                "affine",
                &[self.value(x), self.value(w), self.value(bias)],
            ));
        }
        let mut data = mm(self.value(x).data(), self.value(w).data(), m, k, n);
        let bd = self.value(bias).data();
        for row in data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, n], data),
            Op::Affine(x, w, bias),
            &[x, w, bias],
        ))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, KernelError> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_op(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Adds row vector `r` (`[1, n]`) to every row of matrix `x` (`[m, n]`).
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var, KernelError> {
        let (_, n) = self.mat(x, "add_row")?;
        if self.value(r).shape() != [1, n] {
            return Err(shape_err("add_row", &[self.value(x), self.value(r)]));
        }
        let mut t = self.value(x).clone();
        let rd = self.value(r).data().to_vec();
        for row in t.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(&rd) {
                *o += b;
            }
        }
        Ok(self.push(t, Op::AddRow(x, r), &[x, r]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v + c);
        self.push(t, Op::AddScalar(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(Float::tanh);
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x).map(Float::abs);
        self.push(t, Op::Abs(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(Float::ln);
        self.push(t, Op::Log(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.value(x).map(Float::sqrt);
        self.push(t, Op::Sqrt(x), &[x])
    }

    fn row_softmax(x: &Tensor<T>) -> Tensor<T> {
        let n = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        out
    }

    /// Row-wise softmax (a vector is one row).
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = Self::row_softmax(self.value(x));
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let n = xt.cols();
        let mut out = xt.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    /// Mean over the time (row) axis: `[T, d] -> [1, d]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var, KernelError> {
        let (m, n) = self.mat(x, "mean_time")?;
        let xt = self.value(x);
        let mut out = vec![T::zero(); n];
        for row in xt.data().chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::from_usize(m).unwrap();
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(Tensor::from_parts(vec![1, n], out), Op::MeanTime(x), &[x]))
    }

    /// Strided mean-pool over time: row `i` of the output averages input rows
    /// `[i*factor, min((i+1)*factor, T))`, giving `ceil(T / factor)` rows.
    pub fn downsample(&mut self, x: Var, factor: usize) -> Result<Var, KernelError> {
        let (m, n) = self.mat(x, "downsample")?;
        if factor == 0 {
            return Err(shape_err("downsample", &[self.value(x)]));
        }
        let rows = m.div_ceil(factor);
        let xt = self.value(x);
        let mut out = vec![T::zero(); rows * n];
        for (i, orow) in out.chunks_mut(n).enumerate() {
            let lo = i * factor;
            let hi = (lo + factor).min(m);
            for r in lo..hi {
                for (o, &v) in orow.iter_mut().zip(xt.row_slice(r)) {
                    *o += v;
                }
            }
            let inv = T::one() / T::from_usize(hi - lo).unwrap();
            orow.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, n], out),
            Op::Downsample(x, factor),
            &[x],
        ))
    }

    /// Repeats every row `factor` times and keeps the first `len` rows; the inverse
    /// time mapping of [`Graph::downsample`].
    pub fn upsample(&mut self, x: Var, factor: usize, len: usize) -> Result<Var, KernelError> {
        let (m, n) = self.mat(x, "upsample")?;
        if factor == 0 || len == 0 || m != len.div_ceil(factor) {
            return Err(shape_err("upsample", &[self.value(x)]));
        }
        let xt = self.value(x);
        let mut out = Vec::with_capacity(len * n);
        for t in 0..len {
            out.extend_from_slice(xt.row_slice(t / factor));
        }
        Ok(self.push(
            Tensor::from_parts(vec![len, n], out),
            Op::Upsample(x, factor),
            &[x],
        ))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, KernelError> {
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            dims.push(self.mat(x, "concat_cols")?);
        }
        let m = dims.first().map(|d| d.0).unwrap_or(0);
        if xs.is_empty() || dims.iter().any(|d| d.0 != m) {
            let ts: Vec<_> = xs.iter().map(|&x| self.value(x)).collect();
            return Err(shape_err("concat_cols", &ts));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &x in xs {
                out.extend_from_slice(self.value(x).row_slice(r));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(xs.to_vec()),
            xs,
        ))
    }

    /// Stacks `[1, d]` rows into a `[n, d]` matrix.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var, KernelError> {
        let d = xs.first().map(|&x| self.value(x).numel()).unwrap_or(0);
        if xs.is_empty() || xs.iter().any(|&x| self.value(x).shape() != [1, d]) {
            let ts: Vec<_> = xs.iter().map(|&x| self.value(x)).collect();
            return Err(shape_err("stack_rows", &ts));
        }
        let mut out = Vec::with_capacity(xs.len() * d);
        for &x in xs {
            out.extend_from_slice(self.value(x).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![xs.len(), d], out),
            Op::StackRows(xs.to_vec()),
            xs,
        ))
    }

    /// Row `r` of a matrix as `[1, d]`.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var, KernelError> {
        let (m, n) = self.mat(x, "row")?;
        if r >= m {
            return Err(shape_err("row", &[self.value(x)]));
        }
        let t = Tensor::from_parts(vec![1, n], self.value(x).row_slice(r).to_vec());
        Ok(self.push(t, Op::Row(x, r), &[x]))
    }

    /// Delays the sequence by `k` rows (`out[t] = x[t - k]`), zero-filling rows that
    /// fall outside. Negative `k` advances.
    pub fn shift_rows(&mut self, x: Var, k: isize) -> Result<Var, KernelError> {
        let (m, n) = self.mat(x, "shift_rows")?;
        let xt = self.value(x);
        let mut out = vec![T::zero(); m * n];
        for t in 0..m {
            let src = t as isize - k;
            if src >= 0 && (src as usize) < m {
                out[t * n..(t + 1) * n].copy_from_slice(xt.row_slice(src as usize));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::ShiftRows(x, k),
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum();
        let v = s / T::from_usize(t.numel()).unwrap();
        self.push(Tensor::scalar(v), Op::Mean(x), &[x])
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape(a, b, "dot")?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape(a, b, "mse")?;
        let ta = self.value(a);
        let s: T = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let v = s / T::from_usize(ta.numel()).unwrap();
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), &[a, b]))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, KernelError> {
        if self.value(logits).rows() != 1 {
            return Err(shape_err("cross_entropy", &[self.value(logits)]));
        }
        self.cross_entropy_rows(logits, &[target])
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, KernelError> {
        let t = self.value(logits);
        let n = t.cols();
        if t.rows() != targets.len() || targets.iter().any(|&c| c >= n) {
            return Err(shape_err("cross_entropy", &[t]));
        }
        let mut total = T::zero();
        for (row, &c) in t.data().chunks(n).zip(targets) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            total += lse - row[c];
        }
        let v = total / T::from_usize(targets.len()).unwrap();
        Ok(self.push(
            Tensor::scalar(v),
            Op::CrossEntropy(logits, targets.to_vec()),
            &[logits],
        ))
    }

    /// Reverse-mode accumulation from a scalar. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, KernelError> {
        if self.consumed {
            return Err(KernelError::AlreadyBackpropagated);
        }
        let lshape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(KernelError::NotScalar { shape: lshape });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::filled(&lshape, T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::from_parts(self.value(v).shape().to_vec(), data)
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.requires_grad(*a) {
                    let da = mm_nt(gd, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let db = mm_tn(self.value(*a).data(), gd, m, k, n);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Affine(x, w, b) => {
                let (m, k) = (self.value(*x).rows(), self.value(*x).cols());
                let n = self.value(*w).cols();
                if self.requires_grad(*x) {
                    let dx = mm_nt(gd, self.value(*w).data(), m, n, k);
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.requires_grad(*w) {
                    let dw = mm_tn(self.value(*x).data(), gd, m, k, n);
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); n];
                    for row in gd.chunks(n) {
                        for (o, &v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
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
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let da = gd.iter().zip(bd).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let db = gd.iter().zip(ad).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Div(a, b) => {
                let bd = self.value(*b).data();
                if self.requires_grad(*a) {
                    let da = gd.iter().zip(bd).map(|(&g, &y)| g / y).collect();
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let od = out.data();
                    let db = gd
                        .iter()
                        .zip(bd)
                        .zip(od)
                        .map(|((&g, &y), &q)| -g * q / y)
                        .collect();
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::AddRow(x, r) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*r) {
                    let n = out.cols();
                    let mut dr = vec![T::zero(); n];
                    for row in gd.chunks(n) {
                        for (o, &v) in dr.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *r, self.like(*r, dr));
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * *c)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Tanh(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Abs(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| g * v.signum())
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Log(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| g / v)
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sqrt(x) => {
                let two = T::lit(2.0);
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g / (two * y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Softmax(x) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(n).zip(out.data().chunks(n)) {
                    let s: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    d.extend(grow.iter().zip(yrow).map(|(&g, &y)| y * (g - s)));
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::LogSoftmax(x) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(n).zip(out.data().chunks(n)) {
                    let s: T = grow.iter().copied().sum();
                    d.extend(grow.iter().zip(yrow).map(|(&g, &y)| g - y.exp() * s));
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::MeanTime(x) => {
                let m = self.value(*x).rows();
                let inv = T::one() / T::from_usize(m).unwrap();
                let mut d = Vec::with_capacity(m * gd.len());
                for _ in 0..m {
                    d.extend(gd.iter().map(|&v| v * inv));
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Downsample(x, f) => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let mut d = vec![T::zero(); m * n];
                for (i, grow) in gd.chunks(n).enumerate() {
                    let lo = i * f;
                    let hi = (lo + f).min(m);
                    let inv = T::one() / T::from_usize(hi - lo).unwrap();
                    for r in lo..hi {
                        for (o, &v) in d[r * n..(r + 1) * n].iter_mut().zip(grow) {
                            *o = v * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Upsample(x, f) => {
                let n = out.cols();
                let mut d = vec![T::zero(); self.value(*x).numel()];
                for (t, grow) in gd.chunks(n).enumerate() {
                    let r = t / f;
                    for (o, &v) in d[r * n..(r + 1) * n].iter_mut().zip(grow) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::ConcatCols(xs) => {
                let m = out.rows();
                let total = out.cols();
                let mut off = 0;
                for &x in xs {
                    let c = self.value(x).cols();
                    if self.requires_grad(x) {
                        let mut d = Vec::with_capacity(m * c);
                        for r in 0..m {
                            d.extend_from_slice(&gd[r * total + off..r * total + off + c]);
                        }
                        self.accumulate(grads, x, self.like(x, d));
                    }
                    off += c;
                }
            }
            Op::StackRows(xs) => {
                let d = out.cols();
                for (r, &x) in xs.iter().enumerate() {
                    if self.requires_grad(x) {
                        self.accumulate(grads, x, self.like(x, gd[r * d..(r + 1) * d].to_vec()));
                    }
                }
            }
            Op::Row(x, r) => {
                let xt = self.value(*x);
                let n = xt.cols();
                let mut d = vec![T::zero(); xt.numel()];
                d[r * n..(r + 1) * n].copy_from_slice(gd);
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::ShiftRows(x, k) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = vec![T::zero(); m * n];
                for t in 0..m {
                    let src = t as isize - k;
                    if src >= 0 && (src as usize) < m {
                        let s = src as usize;
                        d[s * n..(s + 1) * n].copy_from_slice(&gd[t * n..(t + 1) * n]);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let v = gd[0] / T::from_usize(n).unwrap();
                self.accumulate(grads, *x, self.like(*x, vec![v; n]));
            }
            Op::Dot(a, b) => {
                let s = gd[0];
                if self.requires_grad(*a) {
                    let t = self.value(*b).map(|v| v * s);
                    self.accumulate(grads, *a, t);
                }
                if self.requires_grad(*b) {
                    let t = self.value(*a).map(|v| v * s);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let c = gd[0] * T::lit(2.0) / T::from_usize(ad.len()).unwrap();
                let diff: Vec<T> = ad.iter().zip(bd).map(|(&x, &y)| (x - y) * c).collect();
                if self.requires_grad(*b) {
                    let neg = diff.iter().map(|&v| -v).collect();
                    self.accumulate(grads, *b, self.like(*b, neg));
                }
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, self.like(*a, diff));
                }
            }
            Op::CrossEntropy(x, targets) => {
                let mut p = Self::row_softmax(self.value(*x));
                let n = p.cols();
                for (r, &c) in targets.iter().enumerate() {
                    p.data_mut()[r * n + c] -= T::one();
                }
                let s = gd[0] / T::from_usize(targets.len()).unwrap();
                self.accumulate(grads, *x, p.map(|v| v * s));
            }
        }
    }
}
