//! Exact Gaussian-process regression with an RBF kernel and a fixed noise
//! level, plus marginal-likelihood learning of `(ℓ_k, σ_k)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::kernel::{kernel_cross, kernel_gram, pairwise_sq_distances, shape_error, KernelParams};
use crate::linalg::{zero_mean_gaussian_log_density, Cholesky};
use crate::optim::{Optimizer, OptimizerKind};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpModel<T> {
    pub kernel: KernelParams<T>,
    pub noise_std: T,
}

impl<T: Scalar> GpModel<T> {
    pub fn new(kernel: KernelParams<T>, noise_std: T) -> Result<Self> {
        kernel.validate()?;
        ensure(noise_std > T::zero() && noise_std.is_finite(), || {
            format!("noise_std must be positive, got {noise_std}")
        })?;
        Ok(Self { kernel, noise_std })
    }
}

fn check_data<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<()> {
    ensure(x.nrows() >= 1, || "at least one training point is required".into())?;
    if x.nrows() != y.len() {
        return Err(shape_error("targets", x.nrows(), y.len()));
    }
    Ok(())
}

/// Factorizes `K + σ_y²I`, retrying once with `1e-10·σ_k²` of jitter.
fn factor_covariance<T: Scalar>(x: ArrayView2<T>, model: &GpModel<T>) -> Result<(Array2<T>, Cholesky<T>)> {
    let k = kernel_gram(x, &model.kernel)?;
    let mut ky = k.clone();
    let noise = model.noise_std * model.noise_std;
    ky.diag_mut().mapv_inplace(|d| d + noise);
    let (chol, _) = Cholesky::with_jitter(ky.view(), T::lit(1e-10) * model.kernel.variance())?;
    Ok((k, chol))
}

/// `log N(y | 0, K + σ_y² I)`.
pub fn gp_log_marginal<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, model: &GpModel<T>) -> Result<T> {
    check_data(x, y)?;
    let (_, chol) = factor_covariance(x, model)?;
    Ok(zero_mean_gaussian_log_density(&chol, y))
}

/// Log marginal likelihood and its gradient with respect to `(ℓ_k, σ_k)`,
/// `½ tr((ααᵀ − K_y⁻¹) ∂K)` with `α = K_y⁻¹ y`.
pub fn gp_log_marginal_grad<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    model: &GpModel<T>,
) -> Result<(T, [T; 2])> {
    check_data(x, y)?;
    let (k, chol) = factor_covariance(x, model)?;
    let value = zero_mean_gaussian_log_density(&chol, y);
    let alpha = chol.solve(y);
    let kinv = chol.inverse();
    let d2 = pairwise_sq_distances(x, x)?;
    let l = model.kernel.length_scale;
    let l3 = l * l * l;
    let half = T::lit(0.5);
    let (mut g_len, mut g_out) = (T::zero(), T::zero());
    let n = y.len();
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[[i, j]];
            g_len += w * k[[i, j]] * d2[[i, j]] / l3;
            g_out += w * k[[i, j]];
        }
    }
    Ok((value, [half * g_len, g_out / model.kernel.output_scale]))
}

/// A GP conditioned on training data, with the factorization cached.
#[derive(Debug, Clone)]
pub struct GpFit<T> {
    model: GpModel<T>,
    inputs: Array2<T>,
    targets: Array1<T>,
    cholesky: Cholesky<T>,
    alpha: Array1<T>,
}

impl<T: Scalar> GpFit<T> {
    pub fn new(model: GpModel<T>, x: ArrayView2<T>, y: ArrayView1<T>) -> Result<Self> {
        check_data(x, y)?;
        let (_, cholesky) = factor_covariance(x, &model)?;
        let alpha = cholesky.solve(y);
        Ok(Self {
            model,
            inputs: x.to_owned(),
            targets: y.to_owned(),
            cholesky,
            alpha,
        })
    }

    pub fn model(&self) -> &GpModel<T> {
        &self.model
    }

    pub fn inputs(&self) -> ArrayView2<'_, T> {
        self.inputs.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, T> {
        self.targets.view()
    }

    pub fn log_marginal(&self) -> T {
        zero_mean_gaussian_log_density(&self.cholesky, self.targets.view())
    }
}

/// Predictive mean `k*ᵀ K_y⁻¹ y` and variance `k(x*,x*) − k*ᵀ K_y⁻¹ k* + σ_y²`.
pub fn gp_predict<T: Scalar>(fit: &GpFit<T>, x_star: ArrayView2<T>) -> Result<(Array1<T>, Array1<T>)> {
    if x_star.ncols() != fit.inputs.ncols() {
        return Err(shape_error("input columns", fit.inputs.ncols(), x_star.ncols()));
    }
    let ks = kernel_cross(fit.inputs.view(), x_star, &fit.model.kernel)?;
    let mean = ks.t().dot(&fit.alpha);
    let v = fit.cholesky.solve_lower_matrix(ks.view());
    let noise = fit.model.noise_std * fit.model.noise_std;
    let prior = fit.model.kernel.variance();
    let mut var = Array1::zeros(x_star.nrows());
    Zip::from(&mut var)
        .and(v.columns())
        .for_each(|out, col| *out = (prior - col.dot(&col)).max(T::zero()) + noise);
    Ok((mean, var))
}

/// One learning-rate candidate of [`gp_fit_hyperparams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpCandidate<T> {
    pub learning_rate: T,
    /// Log marginal likelihood before each step.
    pub trace: Vec<T>,
    pub kernel: KernelParams<T>,
    pub final_log_marginal: Option<T>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperFit<T> {
    pub kernel: KernelParams<T>,
    pub log_marginal: T,
    /// Euclidean norm of the gradient in the unconstrained coordinates at
    /// the returned kernel; a convergence diagnostic.
    pub final_grad_norm: T,
    pub candidates: Vec<GpCandidate<T>>,
    pub selected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpFitOptions {
    pub steps: usize,
    pub optimizer: OptimizerKind,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Objective and gradient in the softplus-unconstrained coordinates.
fn unconstrained_grad<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    u: &[T],
    noise_std: T,
) -> Result<(T, [T; 2], KernelParams<T>)> {
    let kernel = KernelParams::new(softplus(u[0]), softplus(u[1]))?;
    let (v, g) = gp_log_marginal_grad(x, y, &GpModel::new(kernel, noise_std)?)?;
    Ok((v, [g[0] * sigmoid(u[0]), g[1] * sigmoid(u[1])], kernel))
}

fn run_gp_candidate<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    init: &KernelParams<T>,
    noise_std: T,
    lr: T,
    options: &GpFitOptions,
) -> GpCandidate<T> {
    let mut u = vec![softplus_inverse(init.length_scale), softplus_inverse(init.output_scale)];
    let mut opt = Optimizer::new(options.optimizer, lr, 2);
    let mut trace = Vec::with_capacity(options.steps);
    let mut failure = None;
    for step in 0..options.steps {
        match unconstrained_grad(x, y, &u, noise_std) {
            Ok((v, g, _)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => {
                trace.push(v);
                opt.ascend(&mut u, &g);
            }
            Ok(_) => {
                failure = Some(format!("step {step}: non-finite log marginal"));
                break;
            }
            Err(e) => {
                failure = Some(format!("step {step}: {e}"));
                break;
            }
        }
    }
    let kernel = KernelParams {
        length_scale: softplus(u[0]),
        output_scale: softplus(u[1]),
    };
    let final_log_marginal = match failure {
        Some(_) => None,
        None => match GpModel::new(kernel, noise_std).and_then(|m| gp_log_marginal(x, y, &m)) {
            Ok(v) if v.is_finite() => Some(v),
            Ok(_) => {
                failure = Some("non-finite final log marginal".into());
                None
            }
            Err(e) => {
                failure = Some(format!("final evaluation: {e}"));
                None
            }
        },
    };
    GpCandidate {
        learning_rate: lr,
        trace,
        kernel,
        final_log_marginal,
        failure,
    }
}

/// Ascends the log marginal likelihood over softplus-unconstrained
/// `(ℓ_k, σ_k)` with a fixed step budget, once per learning rate, and
/// returns the candidate with the highest final value.
pub fn gp_fit_hyperparams<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    init: &KernelParams<T>,
    noise_std: T,
    learning_rates: &[T],
    options: &GpFitOptions,
) -> Result<GpHyperFit<T>> {
    check_data(x, y)?;
    init.validate()?;
    GpModel::new(*init, noise_std)?;
    ensure(options.steps >= 1, || "steps must be at least 1".into())?;
    ensure(!learning_rates.is_empty(), || "at least one learning rate is required".into())?;
    let candidates: Vec<GpCandidate<T>> = learning_rates
        .par_iter()
        .map(|&lr| run_gp_candidate(x, y, init, noise_std, lr, options))
        .collect();
    let mut best: Option<(usize, T)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(v) = c.final_log_marginal {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    let Some((selected, log_marginal)) = best else {
        return Err(Error::AllCandidatesFailed(
            candidates
                .iter()
                .map(|c| format!("lr={}: {}", c.learning_rate, c.failure.as_deref().unwrap_or("failed")))
                .collect(),
        ));
    };
    let kernel = candidates[selected].kernel;
    let u = [softplus_inverse(kernel.length_scale), softplus_inverse(kernel.output_scale)];
    let (_, g, _) = unconstrained_grad(x, y, &u, noise_std)?;
    Ok(GpHyperFit {
        kernel,
        log_marginal,
        final_grad_norm: (g[0] * g[0] + g[1] * g[1]).sqrt(),
        candidates,
        selected,
    })
}
