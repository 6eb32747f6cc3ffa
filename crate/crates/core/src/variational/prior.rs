//! Gaussian priors over parameter blocks, KL divergences from an isotropic
//! `q`, and the closed-form optimal prior scales λ*, τ*.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::posterior::IsotropicGaussianQ;
use crate::scalar::Scalar;
use crate::variational::lowrank::LowRankCovariance;

/// Base covariance `Σ_p`, before the overall scale.
#[derive(Debug, Clone)]
pub enum PriorCovariance<T> {
    Identity(usize),
    Diagonal(Array1<T>),
    DiagPlusLowRank(LowRankCovariance<T>),
}

impl<T: Scalar> PriorCovariance<T> {
    pub fn diagonal(d: Array1<T>) -> Result<Self> {
        ensure(d.iter().all(|&v| v > T::zero() && v.is_finite()), || {
            "diagonal prior variances must be positive".into()
        })?;
        Ok(Self::Diagonal(d))
    }

    pub fn diag_plus_lowrank(sigma_diag: Array1<T>, factors: Array2<T>) -> Result<Self> {
        Ok(Self::DiagPlusLowRank(LowRankCovariance::new(sigma_diag, factors)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Identity(n) => *n,
            Self::Diagonal(d) => d.len(),
            Self::DiagPlusLowRank(c) => c.dim(),
        }
    }

    pub fn trace_inverse(&self) -> T {
        match self {
            Self::Identity(n) => T::from_usize_lossy(*n),
            Self::Diagonal(d) => d.iter().map(|&v| T::one() / v).sum(),
            Self::DiagPlusLowRank(c) => c.trace_inverse(),
        }
    }

    pub fn log_det(&self) -> T {
        match self {
            Self::Identity(_) => T::zero(),
            Self::Diagonal(d) => d.iter().map(|&v| v.ln()).sum(),
            Self::DiagPlusLowRank(c) => c.log_det(),
        }
    }

    fn check(&self, delta: ArrayView1<T>) -> Result<()> {
        ensure(delta.len() == self.dim(), || {
            format!("vector length {} does not match prior dim {}", delta.len(), self.dim())
        })
    }

    /// `δᵀ Σ_p⁻¹ δ`.
    pub fn mahalanobis(&self, delta: ArrayView1<T>) -> Result<T> {
        self.check(delta)?;
        match self {
            Self::Identity(_) => Ok(delta.dot(&delta)),
            Self::Diagonal(d) => Ok(delta.iter().zip(d.iter()).map(|(&x, &v)| x * x / v).sum()),
            Self::DiagPlusLowRank(c) => c.mahalanobis(delta),
        }
    }

    /// `Σ_p⁻¹ δ`.
    pub fn apply_inverse(&self, delta: ArrayView1<T>) -> Result<Array1<T>> {
        self.check(delta)?;
        match self {
            Self::Identity(_) => Ok(delta.to_owned()),
            Self::Diagonal(d) => Ok(&delta / d),
            Self::DiagPlusLowRank(c) => c.apply_inverse(delta),
        }
    }

    pub fn dense(&self) -> Array2<T> {
        match self {
            Self::Identity(n) => Array2::eye(*n),
            Self::Diagonal(d) => Array2::from_diag(d),
            Self::DiagPlusLowRank(c) => c.dense(),
        }
    }
}

/// `p(θ) = N(mean, scale · Σ_p)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior<T> {
    pub mean: Array1<T>,
    pub covariance: PriorCovariance<T>,
    /// Overall scale λ (or τ for a head block).
    pub scale: T,
}

impl<T: Scalar> GaussianPrior<T> {
    pub fn new(mean: Array1<T>, covariance: PriorCovariance<T>, scale: T) -> Result<Self> {
        ensure(mean.len() == covariance.dim(), || {
            format!("prior mean has length {} but covariance dim {}", mean.len(), covariance.dim())
        })?;
        ensure(scale > T::zero() && scale.is_finite(), || {
            format!("prior scale must be positive, got {scale}")
        })?;
        Ok(Self {
            mean,
            covariance,
            scale,
        })
    }

    pub fn scaled_identity(mean: Array1<T>, lambda: T) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, PriorCovariance::Identity(n), lambda)
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            covariance: PriorCovariance::Identity(dim),
            scale: T::one(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, theta: ArrayView1<T>) -> Result<T> {
        let delta = &theta - &self.mean;
        let f = T::from_usize_lossy(self.dim());
        let maha = self.covariance.mahalanobis(delta.view())? / self.scale;
        Ok(-T::lit(0.5) * (f * (T::TAU() * self.scale).ln() + self.covariance.log_det() + maha))
    }
}

/// `p(vec(V)) = N(0, τ I_{HC})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPrior<T> {
    pub tau: T,
    pub head_dim: usize,
}

impl<T: Scalar> HeadPrior<T> {
    pub fn new(tau: T, head_dim: usize) -> Result<Self> {
        ensure(tau > T::zero() && tau.is_finite(), || format!("tau must be positive, got {tau}"))?;
        ensure(head_dim >= 1, || "head_dim must be at least 1".into())?;
        Ok(Self { tau, head_dim })
    }

    pub fn to_gaussian(&self) -> GaussianPrior<T> {
        GaussianPrior {
            mean: Array1::zeros(self.head_dim),
            covariance: PriorCovariance::Identity(self.head_dim),
            scale: self.tau,
        }
    }
}

/// `KL(N(m, σ̄²I) ‖ N(μ_p, λΣ_p))`
/// `= ½[σ̄²/λ·tr(Σ_p⁻¹) + (μ_p−m)ᵀΣ_p⁻¹(μ_p−m)/λ − F + F log λ + log det Σ_p − F log σ̄²]`.
pub fn kl_isotropic_q_vs_prior<T: Scalar>(q: &IsotropicGaussianQ<T>, prior: &GaussianPrior<T>) -> Result<T> {
    ensure(q.dim() == prior.dim(), || {
        format!("q dimension {} does not match prior dimension {}", q.dim(), prior.dim())
    })?;
    let delta = &prior.mean - &q.mean;
    let maha = prior.covariance.mahalanobis(delta.view())?;
    Ok(kl_from_parts(
        prior.dim(),
        q.variance,
        prior.scale,
        prior.covariance.trace_inverse(),
        maha,
        prior.covariance.log_det(),
    ))
}

pub(crate) fn kl_from_parts<T: Scalar>(dim: usize, variance: T, scale: T, trace_inv: T, maha: T, log_det: T) -> T {
    let f = T::from_usize_lossy(dim);
    T::lit(0.5) * (variance / scale * trace_inv + maha / scale - f + f * scale.ln() + log_det - f * variance.ln())
}

/// `KL(N(vec(V̄), σ̄²I) ‖ N(0, τI))`
/// `= ½[σ̄²/τ·HC + ‖vec(V̄)‖²/τ − HC + HC log τ − HC log σ̄²]`.
pub fn kl_head_q_vs_prior<T: Scalar>(v_mean: ArrayView1<T>, sigma_q_sq: T, head: &HeadPrior<T>) -> Result<T> {
    ensure(v_mean.len() == head.head_dim, || {
        format!("head mean length {} does not match head_dim {}", v_mean.len(), head.head_dim)
    })?;
    ensure(sigma_q_sq > T::zero(), || "sigma_q_sq must be positive".into())?;
    let hc = T::from_usize_lossy(head.head_dim);
    let tau = head.tau;
    Ok(T::lit(0.5) * (sigma_q_sq / tau * hc + v_mean.dot(&v_mean) / tau - hc + hc * tau.ln() - hc * sigma_q_sq.ln()))
}

/// λ* = (1/F)[σ̄²·tr(Σ_p⁻¹) + (μ_p−m)ᵀΣ_p⁻¹(μ_p−m)], the maximizer of −KL over λ.
pub fn optimal_lambda<T: Scalar>(
    q: &IsotropicGaussianQ<T>,
    prior_mean: ArrayView1<T>,
    base: &PriorCovariance<T>,
) -> Result<T> {
    ensure(q.dim() == base.dim() && prior_mean.len() == base.dim(), || {
        "dimension mismatch between q, prior mean and covariance".into()
    })?;
    let delta = &prior_mean - &q.mean;
    let f = T::from_usize_lossy(base.dim());
    Ok((q.variance * base.trace_inverse() + base.mahalanobis(delta.view())?) / f)
}

/// τ* = (σ̄²·HC + ‖vec(V̄)‖²)/HC.
pub fn optimal_tau<T: Scalar>(v_mean: ArrayView1<T>, sigma_q_sq: T, head_dim: usize) -> Result<T> {
    ensure(head_dim >= 1 && v_mean.len() == head_dim, || {
        format!("head mean length {} does not match head_dim {head_dim}", v_mean.len())
    })?;
    let hc = T::from_usize_lossy(head_dim);
    Ok((sigma_q_sq * hc + v_mean.dot(&v_mean)) / hc)
}

/// Which prior scale a curvature value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleHyper {
    Lambda,
    Tau,
}

/// `∂²(−KL)/∂s²` at the optimum `s*`: `−dim/(2 s*²)` for λ (dim = F) and
/// τ (dim = HC) alike. Always negative, so `s*` is a maximum.
pub fn second_derivative_at_optimum<T: Scalar>(_kind: ScaleHyper, dim: usize, optimum: T) -> Result<T> {
    ensure(dim >= 1, || "dimension must be at least 1".into())?;
    ensure(optimum > T::zero(), || format!("optimum must be positive, got {optimum}"))?;
    Ok(-T::from_usize_lossy(dim) / (T::lit(2.0) * optimum * optimum))
}

/// Dense-path KL used by diagnostics: builds `Σ_p` explicitly.
pub fn kl_isotropic_dense<T: Scalar>(
    q_mean: ArrayView1<T>,
    q_variance: T,
    prior_mean: ArrayView1<T>,
    prior_cov: ArrayView2<T>,
) -> Result<T> {
    let chol = crate::linalg::Cholesky::new(prior_cov)?;
    let inv = chol.inverse();
    let delta = &prior_mean - &q_mean;
    let maha = delta.dot(&inv.dot(&delta));
    Ok(kl_from_parts(
        q_mean.len(),
        q_variance,
        T::one(),
        inv.diag().sum(),
        maha,
        chol.log_det(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kl_zero_for_identical_distributions() {
        let m = array![0.3f64, -1.2, 2.0];
        let q = IsotropicGaussianQ::new(m.clone(), 0.7).unwrap();
        let p = GaussianPrior::scaled_identity(m, 0.7).unwrap();
        assert!(kl_isotropic_q_vs_prior(&q, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_scalar_mahalanobis_half() {
        let q = IsotropicGaussianQ::new(array![1.0f64], 1.0).unwrap();
        let p = GaussianPrior::standard(1);
        assert!((kl_isotropic_q_vs_prior(&q, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn head_kl_cases() {
        let head = HeadPrior::new(1.0f64, 1).unwrap();
        assert!((kl_head_q_vs_prior(array![2.0].view(), 1.0, &head).unwrap() - 2.0).abs() < 1e-15);
        let head3 = HeadPrior::new(0.4f64, 3).unwrap();
        assert!(kl_head_q_vs_prior(Array1::zeros(3).view(), 0.4, &head3).unwrap().abs() < 1e-15);
    }

    #[test]
    fn head_kl_agrees_with_general_kl() {
        let v = array![0.1f64, -0.4, 0.9, 0.0, 1.3, -0.2];
        let head = HeadPrior::new(0.8, 6).unwrap();
        let q = IsotropicGaussianQ::new(v.clone(), 0.3).unwrap();
        let a = kl_head_q_vs_prior(v.view(), 0.3, &head).unwrap();
        let b = kl_isotropic_q_vs_prior(&q, &head.to_gaussian()).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn optimal_scales_simple_cases() {
        let q = IsotropicGaussianQ::new(array![1.0f64, 2.0, 3.0], 2.0).unwrap();
        let l = optimal_lambda(&q, array![1.0, 2.0, 3.0].view(), &PriorCovariance::Identity(3)).unwrap();
        assert!((l - 2.0).abs() < 1e-15);
        // σ̄² = 1 and ‖μ_p − m‖² = F
        let q1 = IsotropicGaussianQ::new(array![1.0f64, -1.0], 1.0).unwrap();
        let l1 = optimal_lambda(&q1, Array1::zeros(2).view(), &PriorCovariance::Identity(2)).unwrap();
        assert!((l1 - 2.0).abs() < 1e-15);
        assert_eq!(optimal_tau(Array1::zeros(4).view(), 3.0, 4).unwrap(), 3.0);
        assert!((optimal_tau(array![1.0f64, 1.0].view(), 1.0, 2).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn curvature_formula() {
        assert_eq!(second_derivative_at_optimum(ScaleHyper::Lambda, 4, 1.0).unwrap(), -2.0);
        assert_eq!(second_derivative_at_optimum(ScaleHyper::Tau, 8, 2.0).unwrap(), -1.0);
    }

    #[test]
    fn prior_log_density_matches_dense_formula() {
        let cov = PriorCovariance::diagonal(array![0.5, 2.0]).unwrap();
        let p = GaussianPrior::new(array![1.0, -1.0], cov, 3.0).unwrap();
        let x = array![0.0, 0.5];
        let one = |x: f64, m: f64, v: f64| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v);
        let e = one(0.0, 1.0, 1.5) + one(0.5, -1.0, 6.0);
        assert!((p.log_density(x.view()).unwrap() - e).abs() < 1e-13);
    }

    #[test]
    fn prior_validation() {
        assert!(GaussianPrior::scaled_identity(array![0.0], 0.0).is_err());
        assert!(PriorCovariance::diagonal(array![1.0, -1.0]).is_err());
        assert!(GaussianPrior::new(array![0.0, 0.0], PriorCovariance::Identity(3), 1.0).is_err());
        assert!(HeadPrior::new(0.0, 2).is_err());
    }
}
