//! A small tape-based reverse-mode differentiation engine over dense
//! row-major tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Leaves created
//! with [`Graph::param`] receive gradients; leaves created with
//! [`Graph::constant`] do not, and neither does anything computed purely
//! from constants. Gradients are accumulated in reverse creation order, so a
//! backward pass is bit-reproducible.
//!
//! Two-dimensional operations view a tensor as `rows × cols`, where `cols` is
//! the last dimension. Image operations expect shape `[height, width, channels]`.

mod backward;
mod check;
mod optim;

pub use backward::Gradients;
pub use check::{grad_check, grad_check_subset, relative_error, GradCheck};
pub use optim::{adam_step, AdamConfig, AdamState};

use crate::error::{bail, Result};
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            bail!(Contract, "shape {shape:?} does not hold {} values", data.len());
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        if self.data.is_empty() { 0 } else { self.data.len() / self.cols() }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product the engine cannot derive itself.
pub trait CustomOp: Send + Sync {
    /// Gradient with respect to each input, given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Gelu,
    Sqrt,
    Abs,
    Exp,
    Square,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    RowNormalize(Var),
    Conv(Var, Vec<f64>, Axis),
    AreaDown(Var, usize),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

/// Spatial axis of an image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Y,
    X,
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// `C (m×n) = op(A) · op(B)`, with `op` an optional transpose of a row-major
/// operand; accumulates into `c` when `accumulate`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold at least m·k, k·n and m·n elements, which covers
    // every offset reachable with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + crate::fmath::tanh(C * (x + 0.044715 * x * x * x)))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = crate::fmath::tanh(C * (x + 0.044715 * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => crate::fmath::tanh(x),
            Unary::Sigmoid => crate::scene::sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Gelu => gelu(x),
            Unary::Sqrt => libm::sqrt(x),
            Unary::Abs => x.abs(),
            Unary::Exp => crate::fmath::exp(x),
            Unary::Square => x * x,
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Tensor { shape, data }, op, needs)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            bail!(Contract, "{what}: shapes {sa:?} and {sb:?} differ");
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.derived(self.value(a).shape.clone(), data, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn row_broadcast(&mut self, x: Var, r: Var, mul: bool) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(r).len() != cols {
            bail!(Contract, "row operand has {} values, expected {cols}", self.value(r).len());
        }
        let row = &self.value(r).data;
        let data = self
            .value(x)
            .data
            .chunks_exact(cols)
            .flat_map(|c| c.iter().zip(row).map(|(&v, &w)| if mul { v * w } else { v + w }))
            .collect();
        let op = if mul { Op::MulRow(x, r) } else { Op::AddRow(x, r) };
        Ok(self.derived(self.value(x).shape.clone(), data, op, &[x, r]))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(x, row, false)
    }

    /// Multiplies every row of `x` elementwise by a row vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(x, row, true)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data.iter().map(|v| v * s).collect();
        self.derived(self.value(x).shape.clone(), data, Op::Scale(x, s), &[x])
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data.iter().map(|v| v + c).collect();
        self.derived(self.value(x).shape.clone(), data, Op::Offset(x), &[x])
    }

    fn unary(&mut self, x: Var, u: Unary) -> Var {
        let data = self.value(x).data.iter().map(|&v| u.apply(v)).collect();
        self.derived(self.value(x).shape.clone(), data, Op::Unary(x, u), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    /// Elementwise clamp; gradients pass only inside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let data = self.value(x).data.iter().map(|v| v.clamp(lo, hi)).collect();
        self.derived(self.value(x).shape.clone(), data, Op::Clamp(x, lo, hi), &[x])
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = if b_t { (tb.cols(), tb.rows()) } else { (tb.rows(), tb.cols()) };
        if ta.shape.len() != 2 || tb.shape.len() != 2 || k != kb {
            bail!(Contract, "matmul of {:?} and {:?}{}", ta.shape, tb.shape, if b_t { "ᵀ" } else { "" });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, false, &tb.data, b_t, &mut out, false);
        let op = if b_t { Op::MatMulNt(a, b) } else { Op::MatMul(a, b) };
        Ok(self.derived(vec![m, n], out, op, &[a, b]))
    }

    /// `a · b` for matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for matrices.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape.len() != 2 {
            bail!(Contract, "transpose needs a matrix, got {:?}", t.shape);
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data[i * c + j];
            }
        }
        Ok(self.derived(vec![c, r], out, Op::Transpose(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.derived(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.derived(vec![1], vec![s], Op::Mean(x), &[x])
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        if start + len > cols || len == 0 {
            bail!(Contract, "column slice {start}..{} of {cols} columns", start + len);
        }
        let data = t.data.chunks_exact(cols).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = len;
        Ok(self.derived(shape, data, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else { bail!(Contract, "concat of nothing") };
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            bail!(Contract, "column concat with differing row counts");
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                data.extend_from_slice(&t.data[r * t.cols()..(r + 1) * t.cols()]);
            }
        }
        Ok(self.derived(vec![rows, cols], data, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        if start + len > t.rows() || len == 0 {
            bail!(Contract, "row slice {start}..{} of {} rows", start + len, t.rows());
        }
        let data = t.data[start * cols..(start + len) * cols].to_vec();
        Ok(self.derived(vec![len, cols], data, Op::SliceRows(x, start), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else { bail!(Contract, "concat of nothing") };
        let cols = self.value(first).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            bail!(Contract, "row concat with differing column counts");
        }
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).data.iter().copied()).collect();
        let rows = data.len() / cols;
        Ok(self.derived(vec![rows, cols], data, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() || shape.is_empty() {
            bail!(Contract, "cannot reshape {:?} to {shape:?}", t.shape);
        }
        let data = t.data.clone();
        Ok(self.derived(shape, data, Op::Reshape(x), &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = t.data.clone();
        for row in data.chunks_exact_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = crate::fmath::exp(*v - m);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.derived(t.shape.clone(), data, Op::SoftmaxRows(x), &[x])
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = t.data.clone();
        for row in data.chunks_exact_mut(cols) {
            let (mu, inv) = row_stats(row);
            for v in row.iter_mut() {
                *v = (*v - mu) * inv;
            }
        }
        self.derived(t.shape.clone(), data, Op::LayerNormRows(x), &[x])
    }

    /// Scales each row to unit Euclidean norm.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = t.data.clone();
        for row in data.chunks_exact_mut(cols) {
            let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        self.derived(t.shape.clone(), data, Op::RowNormalize(x), &[x])
    }

    /// Correlates every channel of a `[h, w, c]` tensor with an odd-length
    /// centered `kernel` along `axis`, replicating edge pixels.
    pub fn conv(&mut self, x: Var, kernel: &[f64], axis: Axis) -> Result<Var> {
        let t = self.value(x);
        let [h, w, c] = image_dims(t)?;
        if kernel.len() % 2 == 0 {
            bail!(Contract, "convolution kernel length must be odd");
        }
        let r = (kernel.len() / 2) as isize;
        let mut out = vec![0.0; t.len()];
        for y in 0..h {
            for xi in 0..w {
                for (k, &wk) in kernel.iter().enumerate() {
                    let off = k as isize - r;
                    let (sy, sx) = match axis {
                        Axis::Y => ((y as isize + off).clamp(0, h as isize - 1) as usize, xi),
                        Axis::X => (y, (xi as isize + off).clamp(0, w as isize - 1) as usize),
                    };
                    let (dst, src) = ((y * w + xi) * c, (sy * w + sx) * c);
                    for ch in 0..c {
                        out[dst + ch] += wk * t.data[src + ch];
                    }
                }
            }
        }
        let shape = t.shape.clone();
        Ok(self.derived(shape, out, Op::Conv(x, kernel.to_vec(), axis), &[x]))
    }

    /// Averages non-overlapping `factor × factor` blocks of a `[h, w, c]`
    /// tensor.
    pub fn area_downscale(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = self.value(x);
        let [h, w, c] = image_dims(t)?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            bail!(Contract, "{h}x{w} is not divisible by {factor}");
        }
        let (oh, ow) = (h / factor, w / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; oh * ow * c];
        for y in 0..h {
            for xi in 0..w {
                let (dst, src) = (((y / factor) * ow + xi / factor) * c, (y * w + xi) * c);
                for ch in 0..c {
                    out[dst + ch] += norm * t.data[src + ch];
                }
            }
        }
        Ok(self.derived(vec![oh, ow, c], out, Op::AreaDown(x, factor), &[x]))
    }

    /// Records an operation whose forward `output` the caller computed.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.derived(output.shape.clone(), output.data, Op::Custom(inputs.to_vec(), op), inputs)
    }
}

pub(crate) fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / libm::sqrt(var + LAYER_NORM_EPS))
}

pub(crate) fn image_dims(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [h, w, c] => Ok([h, w, c]),
        ref s => bail!(Contract, "image operation needs [h, w, c], got {s:?}"),
    }
}
