//! Small dense symmetric positive-definite algebra.
//!
//! Matrices here are at most a few thousand on a side, so a plain
//! row-oriented Cholesky is adequate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn new(a: ArrayView2<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Input(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix not positive definite (pivot {j} = {d})"
                )));
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    /// Factorizes `a`, retrying once with `jitter` added to the diagonal.
    /// Returns whether the jitter was needed.
    pub fn with_jitter(a: ArrayView2<T>, jitter: T) -> Result<(Self, bool)> {
        match Self::new(a) {
            Ok(c) => Ok((c, false)),
            Err(Error::Numerical(_)) => {
                let mut b = a.to_owned();
                b.diag_mut().mapv_inplace(|d| d + jitter);
                Self::new(b.view()).map(|c| (c, true))
            }
            Err(e) => Err(e),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = b.to_owned();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[[i, k]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = b.to_owned();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<T>) -> Array1<T> {
        let y = self.solve_lower(b);
        self.solve_upper(y.view())
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    /// `L⁻¹ B`, used for quadratic forms `Bᵀ A⁻¹ B = (L⁻¹B)ᵀ(L⁻¹B)`.
    pub fn solve_lower_matrix(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve_lower(col));
        }
        out
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        self.lower.diag().iter().map(|&d| two * d.ln()).sum()
    }

    /// Dense inverse, symmetrized.
    pub fn inverse(&self) -> Array2<T> {
        let n = self.dim();
        let inv = self.solve_matrix(Array2::eye(n).view());
        symmetrize(inv)
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quadratic_form(&self, b: ArrayView1<T>) -> T {
        let y = self.solve_lower(b);
        y.dot(&y)
    }
}

/// `log N(y | 0, A)` given the Cholesky factor of `A`.
pub fn zero_mean_gaussian_log_density<T: Scalar>(cov: &Cholesky<T>, y: ArrayView1<T>) -> T {
    let n = T::from_usize_lossy(y.len());
    let half = T::lit(0.5);
    -half * (cov.quadratic_form(y) + cov.log_det() + n * T::TAU().ln())
}

pub(crate) fn symmetrize<T: Scalar>(mut m: Array2<T>) -> Array2<T> {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[[i, j]] + m[[j, i]]) * half;
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    m
}

/// Sum of squared entries, `tr(M Mᵀ)`.
pub(crate) fn frobenius_sq<T: Scalar>(m: ArrayView2<T>) -> T {
    m.iter().map(|&v| v * v).sum()
}
