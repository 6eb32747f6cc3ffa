//! Diagonal-plus-low-rank covariance `Σ_p = ½(diag(d) + QQᵀ/(K−1))` handled
//! through the Woodbury identity and the matrix determinant lemma, with
//! `A = ½ diag(d)`, `U = Q/√(2K−2)`, `C = I_K`, `V = Uᵀ`. No F×F matrix is
//! ever formed outside of [`LowRankCovariance::dense`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{ensure, Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LowRankCovariance<T> {
    diag: Array1<T>,
    factors: Array2<T>,
    a_inv: Array1<T>,
    u: Array2<T>,
    // Cholesky of I_K + Uᵀ A⁻¹ U
    inner: Cholesky<T>,
    trace_inverse: T,
    log_det: T,
}

impl<T: Scalar> LowRankCovariance<T> {
    /// `diag` has length F and `factors` (Q) is F×K with K ≥ 2.
    pub fn new(diag: Array1<T>, factors: Array2<T>) -> Result<Self> {
        let f = diag.len();
        let k = factors.ncols();
        ensure(f >= 1, || "low-rank covariance needs F >= 1".into())?;
        ensure(factors.nrows() == f, || {
            format!("Q has {} rows but diag has {}", factors.nrows(), f)
        })?;
        ensure(k >= 2, || format!("rank count K must be at least 2, got {k}"))?;
        ensure(diag.iter().all(|&d| d > T::zero() && d.is_finite()), || {
            "diagonal entries must be positive".into()
        })?;

        let two = T::lit(2.0);
        let a_inv = diag.mapv(|d| two / d);
        let scale = T::one() / (T::from_usize_lossy(2 * k - 2)).sqrt();
        let u = factors.mapv(|q| q * scale);
        // A⁻¹U
        let mut a_inv_u = u.clone();
        for (mut row, &ai) in a_inv_u.rows_mut().into_iter().zip(a_inv.iter()) {
            row.mapv_inplace(|v| v * ai);
        }
        let mut inner_m = u.t().dot(&a_inv_u);
        inner_m.diag_mut().mapv_inplace(|v| v + T::one());
        let inner = Cholesky::new(inner_m.view())
            .map_err(|e| Error::Numerical(format!("Woodbury inner K×K factorization: {e}")))?;

        // tr(Σ⁻¹) = tr(A⁻¹) − tr(M⁻¹ Uᵀ A⁻² U)
        let b = a_inv_u.t().dot(&a_inv_u);
        let m_inv_b = inner.solve_matrix(b.view());
        let trace_inverse = a_inv.sum() - m_inv_b.diag().sum();

        // log det Σ = log det(I_K + Uᵀ A⁻¹ U) + log det A
        let half = T::lit(0.5);
        let log_det = inner.log_det() + diag.iter().map(|&d| (half * d).ln()).sum::<T>();

        Ok(Self {
            diag,
            factors,
            a_inv,
            u,
            inner,
            trace_inverse,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn rank_count(&self) -> usize {
        self.factors.ncols()
    }

    pub fn diag(&self) -> ArrayView1<'_, T> {
        self.diag.view()
    }

    pub fn factors(&self) -> ArrayView2<'_, T> {
        self.factors.view()
    }

    pub fn trace_inverse(&self) -> T {
        self.trace_inverse
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    fn check_len(&self, delta: ArrayView1<T>) -> Result<()> {
        ensure(delta.len() == self.dim(), || {
            format!("vector length {} does not match covariance dim {}", delta.len(), self.dim())
        })
    }

    /// `Σ⁻¹ δ = A⁻¹δ − A⁻¹U M⁻¹ Uᵀ A⁻¹ δ`.
    pub fn apply_inverse(&self, delta: ArrayView1<T>) -> Result<Array1<T>> {
        self.check_len(delta)?;
        let a_inv_delta = &delta * &self.a_inv;
        let w = self.u.t().dot(&a_inv_delta);
        let z = self.inner.solve(w.view());
        let correction = self.u.dot(&z) * &self.a_inv;
        Ok(a_inv_delta - correction)
    }

    /// `δᵀ Σ⁻¹ δ = δᵀA⁻¹δ − wᵀ M⁻¹ w` with `w = Uᵀ A⁻¹ δ`.
    pub fn mahalanobis(&self, delta: ArrayView1<T>) -> Result<T> {
        self.check_len(delta)?;
        let a_inv_delta = &delta * &self.a_inv;
        let w = self.u.t().dot(&a_inv_delta);
        let v = delta.dot(&a_inv_delta) - self.inner.quadratic_form(w.view());
        // exact arithmetic gives v ≥ 0
        Ok(v.max(T::zero()))
    }

    /// Materialized F×F covariance, for diagnostics and oracles.
    pub fn dense(&self) -> Array2<T> {
        let k1 = T::from_usize_lossy(self.rank_count() - 1);
        let half = T::lit(0.5);
        let mut m = self.factors.dot(&self.factors.t()) / k1;
        for (i, &d) in self.diag.iter().enumerate() {
            m[[i, i]] += d;
        }
        m * half
    }
}

fn build<T: Scalar>(sigma_diag: ArrayView1<T>, q: ArrayView2<T>, k: usize) -> Result<LowRankCovariance<T>> {
    ensure(q.ncols() == k, || {
        format!("Q has {} columns but K = {k}", q.ncols())
    })?;
    LowRankCovariance::new(sigma_diag.to_owned(), q.to_owned())
}

/// `tr(Σ_p⁻¹)` without forming Σ_p.
pub fn lowrank_trace_inverse<T: Scalar>(sigma_diag: ArrayView1<T>, q: ArrayView2<T>, k: usize) -> Result<T> {
    Ok(build(sigma_diag, q, k)?.trace_inverse())
}

/// `δᵀ Σ_p⁻¹ δ` without forming Σ_p.
pub fn lowrank_mahalanobis<T: Scalar>(
    delta: ArrayView1<T>,
    sigma_diag: ArrayView1<T>,
    q: ArrayView2<T>,
    k: usize,
) -> Result<T> {
    build(sigma_diag, q, k)?.mahalanobis(delta)
}

/// `log det Σ_p` without forming Σ_p.
pub fn lowrank_logdet<T: Scalar>(sigma_diag: ArrayView1<T>, q: ArrayView2<T>, k: usize) -> Result<T> {
    Ok(build(sigma_diag, q, k)?.log_det())
}
