//! Small dense linear algebra: row-major matrices, weighted Gram products and
//! Cholesky solves. Design matrices are tall (n × d with d small), so
//! everything here is O(n d²) or cheaper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Matrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![T::zero(); nrows * ncols],
        }
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::LengthMismatch {
                expected: nrows * ncols,
                got: data.len(),
            });
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            nrows: rows.len(),
            ncols,
            data,
        })
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns(cols: &[Vec<T>]) -> Result<Self> {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, Vec::len);
        let mut m = Self::zeros(nrows, ncols);
        for (j, col) in cols.iter().enumerate() {
            if col.len() != nrows {
                return Err(Error::LengthMismatch {
                    expected: nrows,
                    got: col.len(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                m.data[i * ncols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.ncols.max(1)).take(self.nrows)
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.nrows).map(|i| self.data[i * self.ncols + j]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            nrows: idx.len(),
            ncols: self.ncols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                got: other.ncols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            nrows: self.nrows + other.nrows,
            ncols: self.ncols,
            data,
        })
    }

    /// `self · v`
    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.ncols);
        self.rows()
            .map(|r| r.iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · diag(w) · self`, the weighted Gram matrix (d × d).
    pub fn weighted_gram(&self, w: &[T]) -> Self {
        debug_assert_eq!(w.len(), self.nrows);
        let d = self.ncols;
        let mut g = Self::zeros(d, d);
        for (row, &wi) in self.rows().zip(w) {
            if wi == T::zero() {
                continue;
            }
            for j in 0..d {
                let a = wi * row[j];
                let gj = &mut g.data[j * d..(j + 1) * d];
                for k in j..d {
                    gj[k] = gj[k] + a * row[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                g.data[j * d + k] = g.data[k * d + j];
            }
        }
        g
    }

    /// `selfᵀ · self`
    pub fn gram(&self) -> Self {
        self.weighted_gram(&vec![T::one(); self.nrows])
    }

    /// `selfᵀ · (w ∘ y)`
    pub fn weighted_tmatvec(&self, w: &[T], y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for ((row, &wi), &yi) in self.rows().zip(w).zip(y) {
            let a = wi * yi;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + a * x;
            }
        }
        out
    }

    /// `selfᵀ · y`
    pub fn tmatvec(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for (row, &yi) in self.rows().zip(y) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + yi * x;
            }
        }
        out
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.nrows.min(self.ncols) {
            self[(i, i)] = self[(i, i)] + v;
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.ncols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.ncols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factors `a`, failing when a pivot falls below `rel_tol` times the
    /// largest diagonal entry.
    pub fn factor_with_tol(a: &Matrix<T>, rel_tol: T) -> Option<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return None;
        }
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max);
        if !(max_diag > T::zero()) || !max_diag.is_finite() {
            return None;
        }
        let floor = max_diag * rel_tol;
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut s = a[(j, j)];
            for k in 0..j {
                s = s - l[j * n + k] * l[j * n + k];
            }
            if !(s > floor) {
                return None;
            }
            let ljj = s.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Some(Self { n, l })
    }

    pub fn factor(a: &Matrix<T>) -> Option<Self> {
        Self::factor_with_tol(a, T::rank_tol())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` by forward and back substitution.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    /// `bᵀ A⁻¹ b`
    pub fn quad_inv(&self, b: &[T]) -> T {
        // ‖L⁻¹ b‖²
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y.iter().map(|&v| v * v).sum()
    }

    /// Diagonal of `X A⁻¹ Xᵀ` for the rows of `x` (leverage-type scores).
    pub fn row_quad_forms(&self, x: &Matrix<T>) -> Vec<T> {
        x.rows().map(|r| self.quad_inv(r)).collect()
    }
}

/// Solves the normal equations `(Xᵀ W X) β = Xᵀ W y`.
pub fn weighted_least_squares<T: Real>(x: &Matrix<T>, w: &[T], y: &[T]) -> Option<Vec<T>> {
    let g = x.weighted_gram(w);
    let chol = Cholesky::factor(&g)?;
    Some(chol.solve(&x.weighted_tmatvec(w, y)))
}
