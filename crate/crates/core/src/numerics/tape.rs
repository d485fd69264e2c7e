//! Define-by-run reverse-mode automatic differentiation.
//!
//! Each forward operation appends a node holding its output value and the
//! recipe needed to push gradients back to its inputs. A tape is built for a
//! single batch and thrown away afterwards.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[r, c] + b[0, c]`
    AddRow(Var, Var),
    /// `x[r, c] * s[r, 0]`
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    /// `max(x, c)` elementwise
    MaxConst(Var, T),
    Sum(Var),
    Mean(Var),
    RowNormSq(Var),
    RowDot(Var, Var),
    RowCosine(Var, Var),
    RowNormalize(Var),
    ConcatCols(Vec<Var>),
    LogSoftmax(Var),
    /// Picks block `idx[r]` of width `width` from row `r`.
    GatherBlock(Var, Vec<usize>, usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of primitive operations and their forward values.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; nodes the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.binary(a, b, value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.binary(a, b, value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.binary(a, b, value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.binary(a, b, value, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "add_row bias must be a single row");
        assert_eq!(xv.cols(), bv.cols(), "add_row width mismatch");
        let c = xv.cols();
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v = *v + bv.data()[i % c];
        }
        self.binary(x, bias, value, Op::AddRow(x, bias))
    }

    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!(sv.cols(), 1, "mul_col scale must be a column");
        assert_eq!(xv.rows(), sv.rows(), "mul_col height mismatch");
        let c = xv.cols();
        let mut value = xv.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v = *v * sv.data()[i / c];
        }
        self.binary(x, s, value, Op::MulCol(x, s))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.unary(x, value, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.unary(x, value, Op::AddScalar(x, c))
    }

    /// `c - x`
    pub fn rsub_scalar(&mut self, c: T, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, c)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        self.unary(x, value, Op::Elu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::tanh);
        self.unary(x, value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.unary(x, value, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::exp);
        self.unary(x, value, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.unary(x, value, Op::Square(x))
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()).sqrt());
        self.unary(x, value, Op::Sqrt(x))
    }

    pub fn max_const(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v.max(c));
        self.unary(x, value, Op::MaxConst(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.max_const(x, T::zero())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.unary(x, value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / T::lit(v.numel() as f64));
        self.unary(x, value, Op::Mean(x))
    }

    /// Squared Euclidean norm of each row: `[r, c] -> [r, 1]`.
    pub fn row_norm_sq(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::column(
            (0..xv.rows())
                .map(|r| xv.row(r).iter().map(|&v| v * v).sum())
                .collect(),
        );
        self.unary(x, value, Op::RowNormSq(x))
    }

    /// Row-wise inner product: `[r, c] x [r, c] -> [r, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape mismatch");
        let value = Tensor::column((0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect());
        self.binary(a, b, value, Op::RowDot(a, b))
    }

    /// Row-wise cosine similarity. Rows with a zero norm give 0 and pass no
    /// gradient; callers that care must check the norms themselves.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_cosine shape mismatch");
        let value = Tensor::column(
            (0..av.rows())
                .map(|r| {
                    let (x, y) = (av.row(r), bv.row(r));
                    let denom = (dot(x, x) * dot(y, y)).sqrt();
                    if denom > T::zero() {
                        dot(x, y) / denom
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        );
        self.binary(a, b, value, Op::RowCosine(a, b))
    }

    /// Scales each row to unit Euclidean norm (zero rows stay zero).
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut value = xv.clone();
        for r in 0..xv.rows() {
            let n = dot(xv.row(r), xv.row(r)).sqrt();
            if n > T::zero() {
                for v in &mut value.data_mut()[r * c..(r + 1) * c] {
                    *v = *v / n;
                }
            }
        }
        self.unary(x, value, Op::RowNormalize(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols height mismatch");
                data.extend_from_slice(pv.row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data).expect("consistent concat shape");
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut value = xv.clone();
        for r in 0..xv.rows() {
            let row = &mut value.data_mut()[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        self.unary(x, value, Op::LogSoftmax(x))
    }

    /// From each row `r`, keeps columns `idx[r]*width .. (idx[r]+1)*width`.
    pub fn gather_block(&mut self, x: Var, idx: &[usize], width: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), idx.len(), "gather_block index count mismatch");
        let mut data = Vec::with_capacity(idx.len() * width);
        for (r, &k) in idx.iter().enumerate() {
            data.extend_from_slice(&xv.row(r)[k * width..(k + 1) * width]);
        }
        let value = Tensor::matrix(idx.len(), width, data).expect("consistent gather shape");
        self.unary(x, value, Op::GatherBlock(x, idx.to_vec(), width))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(lv.rows(), lv.cols(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|nd| (nd.value.rows(), nd.value.cols()))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g));
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
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |u, v| u * v));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |u, v| u * v));
                }
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*b) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for r in 0..g.rows() {
                        for (d, &v) in db.iter_mut().zip(g.row(r)) {
                            *d = *d + v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::row_vector(db));
                }
            }
            Op::MulCol(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let c = xv.cols();
                if self.needs(*x) {
                    let mut dx = g.clone();
                    for (k, v) in dx.data_mut().iter_mut().enumerate() {
                        *v = *v * sv.data()[k / c];
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*s) {
                    let ds = (0..xv.rows()).map(|r| dot(g.row(r), xv.row(r))).collect();
                    self.accumulate(grads, *s, Tensor::column(ds));
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * *c)),
            Op::AddScalar(x, _) => self.accumulate(grads, *x, g.clone()),
            Op::Elu(x) => {
                let dx = g.zip_map(y, |u, yv| if yv > T::zero() { u } else { u * (yv + T::one()) });
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                self.accumulate(grads, *x, g.zip_map(y, |u, yv| u * (T::one() - yv * yv)));
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, g.zip_map(y, |u, yv| u * yv * (T::one() - yv)));
            }
            Op::Exp(x) => self.accumulate(grads, *x, g.zip_map(y, |u, yv| u * yv)),
            Op::Square(x) => {
                let two = T::lit(2.0);
                self.accumulate(grads, *x, g.zip_map(self.value(*x), |u, xv| u * two * xv));
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                let dx = g.zip_map(y, |u, yv| if yv > T::zero() { u * half / yv } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::MaxConst(x, c) => {
                let dx = g.zip_map(self.value(*x), |u, xv| if xv > *c { u } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.rows(), xv.cols(), g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let share = g.item() / T::lit(xv.numel() as f64);
                self.accumulate(grads, *x, Tensor::full(xv.rows(), xv.cols(), share));
            }
            Op::RowNormSq(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let two = T::lit(2.0);
                let mut dx = xv.clone();
                for (k, v) in dx.data_mut().iter_mut().enumerate() {
                    *v = *v * two * g.data()[k / c];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = av.cols();
                if self.needs(*a) {
                    let mut da = bv.clone();
                    for (k, v) in da.data_mut().iter_mut().enumerate() {
                        *v = *v * g.data()[k / c];
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = av.clone();
                    for (k, v) in db.data_mut().iter_mut().enumerate() {
                        *v = *v * g.data()[k / c];
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, c) = (av.rows(), av.cols());
                let mut da = Tensor::zeros(rows, c);
                let mut db = Tensor::zeros(rows, c);
                for r in 0..rows {
                    let (x, z) = (av.row(r), bv.row(r));
                    let (nx2, nz2) = (dot(x, x), dot(z, z));
                    if nx2 <= T::zero() || nz2 <= T::zero() {
                        continue;
                    }
                    let inv = T::one() / (nx2 * nz2).sqrt();
                    let cos = y.data()[r];
                    let gr = g.data()[r];
                    for k in 0..c {
                        da.set(r, k, gr * (z[k] * inv - cos * x[k] / nx2));
                        db.set(r, k, gr * (x[k] * inv - cos * z[k] / nz2));
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::RowNormalize(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.rows(), c);
                for r in 0..xv.rows() {
                    let n = dot(xv.row(r), xv.row(r)).sqrt();
                    if n <= T::zero() {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = dot(yr, gr);
                    for k in 0..c {
                        dx.set(r, k, (gr[k] - yr[k] * proj) / n);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        let part = Tensor::matrix(g.rows(), w, data).expect("concat grad shape");
                        self.accumulate(grads, p, part);
                    }
                    offset += w;
                }
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let gsum: T = g.row(r).iter().copied().sum();
                    for k in 0..c {
                        let p = y.get(r, k).exp();
                        dx.set(r, k, g.get(r, k) - p * gsum);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherBlock(x, idx, width) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &k) in idx.iter().enumerate() {
                    for j in 0..*width {
                        dx.set(r, k * width + j, g.get(r, j));
                    }
                }
                self.accumulate(grads, *x, dx);
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
