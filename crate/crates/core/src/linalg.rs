//! Dense row-major matrices and a Cholesky factorization.
//!
//! Sizes in this crate top out around a thousand rows, so a straightforward
//! dense implementation is enough; the factorization is the only numerically
//! sensitive piece and is kept separate from the matrix container.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row-major storage.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix storage",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Extracts the sub-matrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        assert!(self.is_square());
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorizes a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                what: "cholesky input",
                expected: a.rows(),
                got: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let s = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(s > T::zero()) || !s.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let d = s.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let (ri, rj) = (i * n, j * n);
                let partial = dot(&l.data[ri..ri + j], &l.data[rj..rj + j]);
                l[(i, j)] = (a[(i, j)] - partial) / d;
            }
        }
        Ok(Cholesky { l })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let s = b[i] - dot(&self.l.row(i)[..i], &b[..i]);
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        (0..self.dim())
            .map(|i| self.l[(i, i)].ln())
            .sum::<T>()
            * T::of(2.0)
    }

    /// Explicit inverse `A⁻¹ = L⁻ᵀ L⁻¹`, symmetric by construction.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        // Rows of `w` are columns of L⁻¹.
        let mut w = Matrix::zeros(n, n);
        for j in 0..n {
            let row = w.row_mut(j);
            row[j] = T::one() / self.l[(j, j)];
            for i in j + 1..n {
                let mut s = T::zero();
                for k in j..i {
                    s += self.l[(i, k)] * row[k];
                }
                row[i] = -s / self.l[(i, i)];
            }
        }
        let mut inv = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..=a {
                // (L⁻ᵀL⁻¹)_ab = Σ_k (L⁻¹)_ka (L⁻¹)_kb, nonzero for k ≥ a.
                let v = dot(&w.row(a)[a..], &w.row(b)[a..]);
                inv[(a, b)] = v;
                inv[(b, a)] = v;
            }
        }
        inv
    }
}
