//! Minimal dense linear algebra, numerically careful scalar helpers, window
//! pooling, and seeded randomness shared by every other module.
//!
//! All model arithmetic is 64-bit. There is no broadcasting anywhere: shape
//! agreement is a hard contract and violations panic with a descriptive
//! message. Data-dependent failures (division by a zero element) are reported
//! as typed errors instead.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Errors raised by data-dependent numeric operations.
#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("length mismatch: left operand has {left}, right operand has {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("division by zero at element {index}")]
    DivisionByZero { index: usize },
    #[error("operation {op:?} requires a second operand")]
    MissingOperand { op: ElementwiseOp },
    #[error("operation {op:?} takes a single operand")]
    UnexpectedOperand { op: ElementwiseOp },
}

/// Branch-stable logistic function.
///
/// Evaluates `1 / (1 + exp(-x))` without ever forming a large exponential.
/// For large positive inputs the quotient rounds to 1.0, so the positive
/// branch is capped one ulp below 1; the output is then strictly inside
/// (0, 1) for the whole |x| <= 700 range this crate operates in.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (1.0 / (1.0 + (-x).exp())).min(1.0_f64.next_down())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`sigmoid`] expressed through its output value.
pub fn sigmoid_grad_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Dense column vector of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Wraps raw storage. Panics if any element is non-finite.
    pub fn new(data: Vec<f64>) -> Self {
        assert!(data.iter().all(|x| x.is_finite()), "vector elements must be finite");
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        Vector::new((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn check_len(&self, other: &Vector, what: &str) {
        assert!(
            self.len() == other.len(),
            "{what}: length mismatch ({} vs {})",
            self.len(),
            other.len()
        );
    }

    pub fn add(&self, other: &Vector) -> Vector {
        self.check_len(other, "add");
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        self.check_len(other, "sub");
        self.zip(other, |a, b| a - b)
    }

    /// Element-by-element product.
    pub fn hadamard(&self, other: &Vector) -> Vector {
        self.check_len(other, "hadamard");
        self.zip(other, |a, b| a * b)
    }

    /// Element-by-element quotient. The caller must guarantee a nonzero
    /// divisor; a zero element panics (use [`elementwise`] for the checked
    /// form).
    pub fn div(&self, other: &Vector) -> Vector {
        self.check_len(other, "div");
        Vector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .enumerate()
                .map(|(i, (a, b))| {
                    assert!(*b != 0.0, "div: division by zero at element {i}");
                    a / b
                })
                .collect(),
        }
    }

    /// Element-by-element maximum.
    pub fn max_with(&self, other: &Vector) -> Vector {
        self.check_len(other, "max_with");
        self.zip(other, |a, b| if a >= b { a } else { b })
    }

    pub fn scale(&self, c: f64) -> Vector {
        self.map(|x| c * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector { data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, other: &Vector, f: impl Fn(f64, f64) -> f64) -> Vector {
        Vector { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn exp(&self) -> Vector {
        self.map(f64::exp)
    }

    pub fn sigmoid(&self) -> Vector {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Vector {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn square(&self) -> Vector {
        self.map(|x| x * x)
    }

    /// mix ⊙ a + (1 − mix) ⊙ b, the interpolation used by token shifting.
    pub fn lerp(&self, mix: &Vector, b: &Vector) -> Vector {
        self.check_len(mix, "lerp mix");
        self.check_len(b, "lerp operand");
        Vector {
            data: (0..self.len())
                .map(|i| mix.data[i] * self.data[i] + (1.0 - mix.data[i]) * b.data[i])
                .collect(),
        }
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.check_len(other, "dot");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Index of the largest element; ties resolve to the first occurrence.
    pub fn argmax(&self) -> usize {
        assert!(!self.is_empty(), "argmax of an empty vector");
        let mut best = 0;
        for i in 1..self.len() {
            if self.data[i] > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Vector) {
        self.check_len(other, "axpy");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Vector) {
        self.check_len(other, "add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Wraps row-major storage. Panics on a size mismatch or non-finite data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(
            data.len() == rows * cols,
            "matrix storage of {} elements does not match {rows}x{cols}",
            data.len()
        );
        assert!(data.iter().all(|x| x.is_finite()), "matrix elements must be finite");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows: no rows given");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "from_rows: ragged rows");
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row {i} out of bounds ({} rows)", self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        assert!(i < self.rows, "row {i} out of bounds ({} rows)", self.rows);
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        self.data[i * self.cols + j] = v;
    }

    /// Standard matrix-vector product `y_i = Σ_j W[i][j] x_j`.
    ///
    /// Panics when `x.len() != cols`; there is deliberately no broadcasting.
    pub fn matvec(&self, x: &Vector) -> Vector {
        assert!(
            x.len() == self.cols,
            "matvec: {}x{} matrix applied to length-{} vector",
            self.rows,
            self.cols,
            x.len()
        );
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x.as_slice()) {
                acc += w * xv;
            }
            out[i] = acc;
        }
        Vector { data: out }
    }

    /// Transposed product `y_j = Σ_i W[i][j] g_i`, the adjoint of [`matvec`].
    pub fn tmatvec(&self, g: &Vector) -> Vector {
        assert!(
            g.len() == self.rows,
            "tmatvec: {}x{} matrix applied to length-{} vector",
            self.rows,
            self.cols,
            g.len()
        );
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let gi = g[i];
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        Vector { data: out }
    }

    /// Rank-one accumulation `W[i][j] += dy_i * x_j`, used by weight
    /// gradients.
    pub fn add_outer(&mut self, dy: &Vector, x: &Vector) {
        assert!(
            dy.len() == self.rows && x.len() == self.cols,
            "add_outer: {}x{} matrix with outer product {}x{}",
            self.rows,
            self.cols,
            dy.len(),
            x.len()
        );
        for i in 0..self.rows {
            let d = dy[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (w, xv) in row.iter_mut().zip(x.as_slice()) {
                *w += d * xv;
            }
        }
    }
}

/// Operation selector for the uniform [`elementwise`] entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Exp,
    Sigmoid,
    Relu,
    Square,
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Add
                | ElementwiseOp::Sub
                | ElementwiseOp::Mul
                | ElementwiseOp::Div
                | ElementwiseOp::Max
        )
    }
}

/// Checked elementwise dispatch over one or two equal-length vectors.
///
/// Unlike the convenience methods on [`Vector`], every contract here is
/// reported as a typed error: length mismatches, a missing or extra second
/// operand, and division by a zero element (which names the offending index).
pub fn elementwise(
    op: ElementwiseOp,
    a: &Vector,
    b: Option<&Vector>,
) -> Result<Vector, NumericsError> {
    if op.is_binary() {
        let b = b.ok_or(NumericsError::MissingOperand { op })?;
        if a.len() != b.len() {
            return Err(NumericsError::LengthMismatch { left: a.len(), right: b.len() });
        }
        if op == ElementwiseOp::Div {
            if let Some(index) = b.as_slice().iter().position(|&x| x == 0.0) {
                return Err(NumericsError::DivisionByZero { index });
            }
        }
        let out = match op {
            ElementwiseOp::Add => a.add(b),
            ElementwiseOp::Sub => a.sub(b),
            ElementwiseOp::Mul => a.hadamard(b),
            ElementwiseOp::Div => a.div(b),
            ElementwiseOp::Max => a.max_with(b),
            _ => unreachable!(),
        };
        Ok(out)
    } else {
        if b.is_some() {
            return Err(NumericsError::UnexpectedOperand { op });
        }
        let out = match op {
            ElementwiseOp::Exp => a.exp(),
            ElementwiseOp::Sigmoid => a.sigmoid(),
            ElementwiseOp::Relu => a.relu(),
            ElementwiseOp::Square => a.square(),
            _ => unreachable!(),
        };
        Ok(out)
    }
}

/// Channel-wise mean of a window of equal-length vectors.
///
/// The mean is computed as `first + mean(x_i - first)`, which returns a
/// constant window's value exactly (a naive sum/len rounds: in f64,
/// (0.1 + 0.1 + 0.1) / 3 != 0.1). Panics on an empty window or ragged
/// lengths.
pub fn mean_pool(window: &[Vector]) -> Vector {
    assert!(!window.is_empty(), "mean_pool: empty window");
    let dim = window[0].len();
    let inv = 1.0 / window.len() as f64;
    let first = &window[0];
    let mut out = vec![0.0; dim];
    for v in window {
        assert!(v.len() == dim, "mean_pool: ragged window ({} vs {dim})", v.len());
        for (o, (x, f)) in out.iter_mut().zip(v.as_slice().iter().zip(first.as_slice())) {
            *o += x - f;
        }
    }
    for (o, f) in out.iter_mut().zip(first.as_slice()) {
        *o = f + *o * inv;
    }
    Vector { data: out }
}

/// Deterministic, splittable random source.
///
/// Backed by the ChaCha stream cipher with 8 rounds, keyed from the 64-bit
/// seed via `SeedableRng::seed_from_u64`. Both the keying schedule and the
/// ChaCha output stream are fixed by published specifications, so one seed
/// produces one sample stream on every platform. [`Rng::substream`] selects
/// an independent stream under the same key, which is how the crate derives
/// per-purpose generators (init, task data, evaluation) from a single run
/// seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator with the same seed on an independent stream.
    pub fn substream(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng { seed: self.seed, inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform sample from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(lo < hi, "range: empty interval [{lo}, {hi})");
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer from 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below: empty range");
        self.inner.gen_range(0..n)
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vector(&mut self, len: usize, scale: f64) -> Vector {
        Vector::from_fn(len, |_| scale * self.normal())
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, scale: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| scale * self.normal()).collect();
        Matrix::new(rows, cols, data)
    }

    pub fn uniform_vector(&mut self, len: usize, lo: f64, hi: f64) -> Vector {
        Vector::from_fn(len, |_| self.range(lo, hi))
    }
}
