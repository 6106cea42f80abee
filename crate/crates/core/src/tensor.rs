//! Dense row-major linear algebra and activations.
//!
//! Everything is generic over [`Real`] so the same model code runs in 32-bit
//! (training) or 64-bit (gradient checking) precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point scalar usable by every kernel in the crate.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into this precision.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Matrix::from_rows", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `W·x` without shape checks beyond debug assertions.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.matvec_acc(x, &mut out);
        out
    }

    /// `out += W·x`.
    pub fn matvec_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        if self.cols == 0 {
            return;
        }
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = *o + dot(row, x);
        }
    }

    /// `out += Wᵀ·g`.
    pub fn tmatvec_acc(&self, g: &[T], out: &mut [T]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&gr, row) in g.iter().zip(self.data.chunks_exact(self.cols)) {
            if gr == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + gr * w;
            }
        }
    }

    /// `self += a·bᵀ`.
    pub fn outer_acc(&mut self, a: &[T], b: &[T]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ar == T::zero() {
                continue;
            }
            for (w, &bc) in row.iter_mut().zip(b) {
                *w = *w + ar * bc;
            }
        }
    }

    /// `A·B`.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(r).iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out[r] = Σ_c W[r,c]·x[c] + b[r]`, with shape and finiteness checks.
pub fn affine<T: Real>(w: &Matrix<T>, x: &[T], b: &[T]) -> Result<Vec<T>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::shape(
            "affine",
            format!(
                "W is {}x{}, x has {}, b has {}",
                w.rows(),
                w.cols(),
                x.len(),
                b.len()
            ),
        ));
    }
    let mut out = b.to_vec();
    w.matvec_acc(x, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("affine produced a non-finite value"));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activate<T: Real>(kind: Activation, x: &[T]) -> Vec<T> {
    match kind {
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Tanh => x.iter().map(|&v| v.tanh()).collect(),
    }
}

/// Softmax restricted to `mask`; masked entries come out as exact zeros.
pub fn softmax_masked<T: Real>(x: &[T], mask: &[bool]) -> Result<Vec<T>> {
    if x.len() != mask.len() {
        return Err(Error::shape(
            "softmax_masked",
            format!("{} scores, {} mask entries", x.len(), mask.len()),
        ));
    }
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(Error::invalid("softmax over an all-masked vector"));
    }
    if !max.is_finite() {
        return Err(Error::numerical("non-finite score in softmax"));
    }
    let mut out: Vec<T> = x
        .iter()
        .zip(mask)
        .map(|(&v, &m)| {
            let s = if m { v - max } else { T::neg_infinity() };
            s.exp()
        })
        .collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    Ok(out)
}

/// Numerically stable `log softmax` over all entries.
pub fn log_softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    x.iter().map(|&v| v - lse).collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&[T]) -> T, x: &[T], eps: T) -> Result<Vec<T>> {
    if eps <= T::zero() {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let two = T::lit(2.0);
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numerical(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        grad.push((up - down) / (two * eps));
    }
    Ok(grad)
}

/// Relative error between an analytic and a numeric derivative, with an
/// absolute floor on the denominator so near-zero entries compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::shape(
            "invert",
            format!("{:?} is not square", m.shape()),
        ));
    }
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let scale = m.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tiny = scale * f64::EPSILON * n as f64;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
            .unwrap_or(col);
        let pv = a.get(pivot, col);
        if pv.abs() <= tiny || !pv.is_finite() {
            return Err(Error::numerical(format!("singular system at column {col}")));
        }
        if pivot != col {
            for c in 0..n {
                let (x, y) = (a.get(col, c), a.get(pivot, c));
                a.set(col, c, y);
                a.set(pivot, c, x);
                let (x, y) = (inv.get(col, c), inv.get(pivot, c));
                inv.set(col, c, y);
                inv.set(pivot, c, x);
            }
        }
        let d = 1.0 / a.get(col, col);
        for c in 0..n {
            a.set(col, c, a.get(col, c) * d);
            inv.set(col, c, inv.get(col, c) * d);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a.set(r, c, a.get(r, c) - f * a.get(col, c));
                inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
            }
        }
    }
    Ok(inv)
}
