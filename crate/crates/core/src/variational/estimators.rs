//! Monte Carlo estimators over an isotropic `q`: expected log-likelihood and
//! the (data-emphasized) importance-weighted bound.

use ndarray::ArrayView1;

use crate::error::{ensure, Error, Result};
use crate::posterior::{standard_normal_vector, IsotropicGaussianQ};
use crate::rng::rng_from_seed;
use crate::scalar::{log_mean_exp, Scalar};

/// Point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate<T> {
    pub value: T,
    pub standard_error: T,
    pub sample_count: usize,
}

fn mean_and_se<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Average of `Σ_i log p(y_i | θ_s)` over `sample_count` reparameterized
/// draws `θ_s = mean + σ̄_q ε_s`. Deterministic given `seed`.
pub fn mc_expected_loglik<T, F>(
    q: &IsotropicGaussianQ<T>,
    loglik: F,
    sample_count: usize,
    seed: u64,
) -> Result<MonteCarloEstimate<T>>
where
    T: Scalar,
    F: Fn(ArrayView1<T>) -> Result<T>,
{
    ensure(sample_count >= 1, || "sample_count must be at least 1".into())?;
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(sample_count);
    for s in 0..sample_count {
        let eps = standard_normal_vector::<T, _>(q.dim(), &mut rng);
        let theta = q.reparameterize(eps.view());
        let v = loglik(theta.view())?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite log-likelihood {v} at sample {s}")));
        }
        values.push(v);
    }
    let (value, standard_error) = mean_and_se(&values);
    Ok(MonteCarloEstimate {
        value,
        standard_error,
        sample_count,
    })
}

/// `log (1/S) Σ_s exp(κ·log p(y|θ_s) + log p(θ_s) − log q(θ_s))`.
/// κ = 1 gives IWELBo, κ = D/N the data-emphasized variant. The standard
/// error is the delta-method error of the log of the weight mean.
pub fn iwelbo_estimate<T, L, P, Q>(
    q: &IsotropicGaussianQ<T>,
    loglik: L,
    prior_logpdf: P,
    q_logpdf: Q,
    kappa: T,
    sample_count: usize,
    seed: u64,
) -> Result<MonteCarloEstimate<T>>
where
    T: Scalar,
    L: Fn(ArrayView1<T>) -> Result<T>,
    P: Fn(ArrayView1<T>) -> Result<T>,
    Q: Fn(ArrayView1<T>) -> T,
{
    ensure(sample_count >= 1, || "sample_count must be at least 1".into())?;
    ensure(kappa > T::zero(), || format!("kappa must be positive, got {kappa}"))?;
    let mut rng = rng_from_seed(seed);
    let mut log_w = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let eps = standard_normal_vector::<T, _>(q.dim(), &mut rng);
        let theta = q.reparameterize(eps.view());
        let w = kappa * loglik(theta.view())? + prior_logpdf(theta.view())? - q_logpdf(theta.view());
        if w.is_nan() {
            return Err(Error::Numerical("NaN importance weight".into()));
        }
        log_w.push(w);
    }
    let value = log_mean_exp(&log_w);
    if !value.is_finite() {
        return Err(Error::Numerical("all importance weights are zero".into()));
    }
    // relative error of the weight mean, with weights rescaled by the max
    let max = log_w.iter().copied().fold(T::neg_infinity(), T::max);
    let scaled: Vec<T> = log_w.iter().map(|&w| (w - max).exp()).collect();
    let (m, se) = mean_and_se(&scaled);
    Ok(MonteCarloEstimate {
        value,
        standard_error: se / m,
        sample_count,
    })
}
