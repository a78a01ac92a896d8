//! Small dense linear algebra: vectors as slices, row-major matrices, and a
//! Cholesky factorization for the symmetric positive-definite solves this
//! crate needs (Newton steps, Fisher inverses). Dimensions here are a few
//! hundred at most, so simple loops beat pulling in a BLAS.

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Build from a row-major buffer; panics if the length does not match.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Borrow row `i` as a slice.
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Mutably borrow row `i`.
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix-vector product `self * x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Quadratic form `x' * self * x` (intended for symmetric matrices).
    pub fn quad_form(&self, x: &[T]) -> T {
        assert_eq!(self.rows, self.cols, "quadratic form needs a square matrix");
        dot(&self.mul_vec(x), x)
    }

    /// Largest absolute difference from the transpose; 0 for exactly
    /// symmetric matrices.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let gap = (self[(i, j)] - self[(j, i)]).abs();
                if gap > worst {
                    worst = gap;
                }
            }
        }
        worst
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Copy the strict upper triangle onto the lower one, making the matrix
    /// exactly symmetric. Used by accumulators that only fill `j <= k`.
    pub fn mirror_upper(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                self.data[j * self.cols + i] = self.data[i * self.cols + j];
            }
        }
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Serialize as an array of row arrays (for the JSON reports).
impl<T: Serialize> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for row in self.data.chunks(self.cols.max(1)) {
            seq.serialize_element(row)?;
        }
        seq.end()
    }
}

/// Inner product of two equal-length slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "dot product dimension mismatch");
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Euclidean norm of a slice.
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `a += s * b` over equal-length slices.
pub fn axpy<T: Scalar>(a: &mut [T], s: T, b: &[T]) {
    assert_eq!(a.len(), b.len(), "axpy dimension mismatch");
    for (x, &y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factor a symmetric matrix as `L * L'`.
    ///
    /// Returns `None` when a pivot is non-positive or non-finite, i.e. the
    /// matrix is not numerically positive definite. Callers translate that
    /// into their own domain error (singular Fisher, singular Hessian, ...).
    pub fn factor(m: &Matrix<T>) -> Option<Self> {
        assert_eq!(m.rows(), m.cols(), "Cholesky needs a square matrix");
        let n = m.rows();
        let mut lower = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = m[(i, j)];
                for k in 0..j {
                    sum -= lower[(i, k)] * lower[(j, k)];
                }
                if i == j {
                    if !sum.is_finite() || sum <= T::zero() {
                        return None;
                    }
                    lower[(i, j)] = sum.sqrt();
                } else {
                    lower[(i, j)] = sum / lower[(j, j)];
                }
            }
        }
        Some(Cholesky { lower })
    }

    /// Solve `A x = b` where `A = L L'`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lower.rows();
        assert_eq!(b.len(), n, "solve dimension mismatch");
        // forward substitution: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.lower.row(i);
            let mut sum = y[i];
            for k in 0..i {
                sum -= row[k] * y[k];
            }
            y[i] = sum / row[i];
        }
        // back substitution: L' x = y
        for i in (0..n).rev() {
            let mut sum = y[i];
            for (k, &yk) in y.iter().enumerate().skip(i + 1) {
                sum -= self.lower[(k, i)] * yk;
            }
            y[i] = sum / self.lower[(i, i)];
        }
        y
    }

    /// Inverse of the factored matrix, assembled column by column.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lower.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e);
            e[j] = T::zero();
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // the exact inverse is symmetric; enforce it against rounding drift
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = (inv[(i, j)] + inv[(j, i)]) / T::of(2.0);
                inv[(i, j)] = avg;
                inv[(j, i)] = avg;
            }
        }
        inv
    }
}

/// Smallest eigenvalue of a symmetric positive-definite matrix via inverse
/// power iteration (each step is one Cholesky solve). Deterministic: fixed
/// start vector, fixed iteration cap.
pub fn min_eigenvalue_spd<T: Scalar>(m: &Matrix<T>, chol: &Cholesky<T>) -> T {
    let n = m.rows();
    if n == 1 {
        return m[(0, 0)];
    }
    // start away from any single eigenvector: ones plus a coordinate ramp
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::of(0.01) * T::from_count(i + 1))
        .collect();
    let s = norm2(&v);
    for x in v.iter_mut() {
        *x /= s;
    }
    let mut mu_prev = T::zero();
    for _ in 0..500 {
        let w = chol.solve(&v); // w = M^{-1} v
        let mu = dot(&w, &v); // Rayleigh quotient of M^{-1}
        let s = norm2(&w);
        for (x, &wi) in v.iter_mut().zip(&w) {
            *x = wi / s;
        }
        if (mu - mu_prev).abs() <= T::of(1e-14) * mu.abs() {
            mu_prev = mu;
            break;
        }
        mu_prev = mu;
    }
    // largest eigenvalue of M^{-1} is 1/lambda_min(M)
    T::one() / mu_prev
}
