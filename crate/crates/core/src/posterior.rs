//! Gaussian approximate posteriors over a weight vector and the objective
//! breakdown reported for every ELBo evaluation.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::Cholesky;
use crate::scalar::Scalar;

/// `q(θ) = N(θ | mean, variance · I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicGaussianQ<T> {
    pub mean: Array1<T>,
    pub variance: T,
}

impl<T: Scalar> IsotropicGaussianQ<T> {
    pub fn new(mean: Array1<T>, variance: T) -> Result<Self> {
        ensure(variance > T::zero() && variance.is_finite(), || {
            format!("isotropic variance must be positive, got {variance}")
        })?;
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }

    /// Reparameterized draw `mean + σ ε`.
    pub fn reparameterize(&self, eps: ArrayView1<T>) -> Array1<T> {
        let s = self.std_dev();
        &self.mean + &eps.mapv(|e| e * s)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<T> {
        let eps = standard_normal_vector::<T, _>(self.dim(), rng);
        self.reparameterize(eps.view())
    }

    pub fn log_density(&self, theta: ArrayView1<T>) -> T {
        let d = T::from_usize_lossy(self.dim());
        let sq: T = theta
            .iter()
            .zip(self.mean.iter())
            .map(|(&t, &m)| (t - m) * (t - m))
            .sum();
        -T::lit(0.5) * (d * (T::TAU() * self.variance).ln() + sq / self.variance)
    }
}

/// Standard normal vector drawn in f64 then cast, so every scalar type sees
/// the same underlying stream.
pub fn standard_normal_vector<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array1<T> {
    Array1::from_shape_simple_fn(n, || T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// `q(v) = N(v | mean, covariance)` with a dense covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRankPosterior<T> {
    pub mean: Array1<T>,
    pub covariance: Array2<T>,
}

/// Terms of one (tempered) ELBo evaluation: `total = κ·E[log p] − KL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown<T> {
    pub expected_loglik: T,
    pub kl: T,
    pub kappa: T,
    pub total: T,
}

impl<T: Scalar> ObjectiveBreakdown<T> {
    pub fn new(expected_loglik: T, kl: T, kappa: T) -> Self {
        Self {
            expected_loglik,
            kl,
            kappa,
            total: kappa * expected_loglik - kl,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.expected_loglik.is_finite() && self.kl.is_finite() && self.total.is_finite()
    }
}

/// A Gaussian belief over linear weights, enough to form predictions.
pub trait WeightPosterior<T: Scalar> {
    fn weight_mean(&self) -> ArrayView1<'_, T>;
    /// `φᵀ Σ φ` for the posterior covariance `Σ`.
    fn weight_quadratic(&self, phi: ArrayView1<T>) -> T;
}

impl<T: Scalar> WeightPosterior<T> for IsotropicGaussianQ<T> {
    fn weight_mean(&self) -> ArrayView1<'_, T> {
        self.mean.view()
    }

    fn weight_quadratic(&self, phi: ArrayView1<T>) -> T {
        self.variance * phi.dot(&phi)
    }
}

impl<T: Scalar> WeightPosterior<T> for FullRankPosterior<T> {
    fn weight_mean(&self) -> ArrayView1<'_, T> {
        self.mean.view()
    }

    fn weight_quadratic(&self, phi: ArrayView1<T>) -> T {
        phi.dot(&self.covariance.dot(&phi))
    }
}

impl<T: Scalar> FullRankPosterior<T> {
    pub fn covariance_cholesky(&self) -> Result<Cholesky<T>> {
        Cholesky::new(self.covariance.view())
    }
}
