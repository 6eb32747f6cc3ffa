//! Bayesian RFF regression `v ~ N(0, I_R)`, `y_i ~ N(vᵀφ(x_i), σ_y²)`:
//! exact posterior and evidence, closed-form ELBo values and the optimal
//! variational variances, plus the likelihood adapter used by the trainer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{ensure, Result};
use crate::kernel::{shape_error, FeatureMatrix, KernelParams, RffFeatureMap};
use crate::linalg::{zero_mean_gaussian_log_density, Cholesky};
use crate::posterior::{FullRankPosterior, IsotropicGaussianQ, ObjectiveBreakdown, WeightPosterior};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};
use crate::data::{holdout_split, RegressionData};
use crate::map::{fit_map_grid_search, GaussianPenalty, GridProblem, GridSearchFit, PenaltyBlock};
use crate::optim::OptimizerKind;
use crate::variational::{
    fit, ExpectedLogLikGrad, GaussianPrior, LikelihoodModel, LogLikGrad, PriorBlock, ScaleHyper,
    TemperedObjectiveConfig, VariationalFit, VariationalState,
};

/// Model wiring: frozen feature map, kernel hyperparameters, noise level.
#[derive(Debug, Clone)]
pub struct RegressionModel<T> {
    pub feature_map: RffFeatureMap<T>,
    pub kernel: KernelParams<T>,
    pub noise_std: T,
}

impl<T: Scalar> RegressionModel<T> {
    pub fn new(feature_map: RffFeatureMap<T>, kernel: KernelParams<T>, noise_std: T) -> Result<Self> {
        kernel.validate()?;
        check_noise(noise_std)?;
        Ok(Self {
            feature_map,
            kernel,
            noise_std,
        })
    }

    pub fn featurize(&self, x: ArrayView2<T>) -> Result<FeatureMatrix<T>> {
        self.feature_map.featurize(&self.kernel, x)
    }
}

fn check_noise<T: Scalar>(noise_std: T) -> Result<()> {
    ensure(noise_std > T::zero() && noise_std.is_finite(), || {
        format!("noise_std must be positive, got {noise_std}")
    })
}

fn check_targets<T: Scalar>(phi: &FeatureMatrix<T>, y: ArrayView1<T>) -> Result<()> {
    if phi.rows() != y.len() {
        return Err(shape_error("targets length vs feature rows", phi.rows(), y.len()));
    }
    Ok(())
}

/// Cholesky factor of the posterior precision `I_R + ΦᵀΦ/σ_y²`.
fn posterior_precision<T: Scalar>(phi: ArrayView2<T>, noise_std: T) -> Result<Cholesky<T>> {
    let inv_var = T::one() / (noise_std * noise_std);
    let mut prec = phi.t().dot(&phi) * inv_var;
    prec.diag_mut().mapv_inplace(|d| d + T::one());
    Cholesky::new(prec.view())
}

/// Exact posterior `N(Σ Φᵀy/σ_y², Σ)` with `Σ = (I + ΦᵀΦ/σ_y²)⁻¹`.
pub fn exact_posterior<T: Scalar>(
    phi: &FeatureMatrix<T>,
    y: ArrayView1<T>,
    noise_std: T,
) -> Result<FullRankPosterior<T>> {
    check_noise(noise_std)?;
    check_targets(phi, y)?;
    let chol = posterior_precision(phi.values(), noise_std)?;
    let inv_var = T::one() / (noise_std * noise_std);
    let rhs = phi.values().t().dot(&y) * inv_var;
    Ok(FullRankPosterior {
        mean: chol.solve(rhs.view()),
        covariance: chol.inverse(),
    })
}

/// Covariance maximizing the full-rank ELBo. Shares the solver path with
/// [`exact_posterior`], so the two agree bit for bit.
pub fn optimal_fullrank_covariance<T: Scalar>(phi: &FeatureMatrix<T>, noise_std: T) -> Result<Array2<T>> {
    check_noise(noise_std)?;
    Ok(posterior_precision(phi.values(), noise_std)?.inverse())
}

/// `log N(y | 0, σ_y² I + ΦΦᵀ)`.
pub fn log_marginal_likelihood<T: Scalar>(
    phi: &FeatureMatrix<T>,
    y: ArrayView1<T>,
    noise_std: T,
) -> Result<T> {
    check_noise(noise_std)?;
    check_targets(phi, y)?;
    let mut cov = phi.gram();
    let nv = noise_std * noise_std;
    cov.diag_mut().mapv_inplace(|d| d + nv);
    let chol = Cholesky::new(cov.view())?;
    Ok(zero_mean_gaussian_log_density(&chol, y))
}

fn residual_sq<T: Scalar>(phi: ArrayView2<T>, y: ArrayView1<T>, mean: ArrayView1<T>) -> T {
    let r = &y - &phi.dot(&mean);
    r.dot(&r)
}

/// Closed-form ELBo for a full-rank Gaussian `q(v) = N(μ_q, Σ_q)`.
pub fn elbo_fullrank<T: Scalar>(
    mu_q: ArrayView1<T>,
    sigma_q: ArrayView2<T>,
    phi: &FeatureMatrix<T>,
    y: ArrayView1<T>,
    noise_std: T,
) -> Result<T> {
    check_noise(noise_std)?;
    check_targets(phi, y)?;
    let r = phi.feature_count();
    if mu_q.len() != r {
        return Err(shape_error("mean length vs feature count", r, mu_q.len()));
    }
    ensure(sigma_q.nrows() == r && sigma_q.ncols() == r, || {
        format!("covariance must be {r}x{r}")
    })?;
    let chol = Cholesky::new(sigma_q).map_err(|e| crate::Error::Input(format!("Sigma_q: {e}")))?;
    let n = T::from_usize_lossy(y.len());
    let nv = noise_std * noise_std;
    let phi_v = phi.values();
    // tr(Φ Σ Φᵀ) = Σ_ij (ΦΣ)_ij Φ_ij
    let ps = phi_v.dot(&sigma_q);
    let tr_pspt: T = ps.iter().zip(phi_v.iter()).map(|(&a, &b)| a * b).sum();
    let inner = n * (T::TAU() * nv).ln()
        + residual_sq(phi_v, y, mu_q) / nv
        + tr_pspt / nv
        + sigma_q.diag().sum()
        + mu_q.dot(&mu_q)
        - T::from_usize_lossy(r)
        - chol.log_det();
    Ok(-T::lit(0.5) * inner)
}

/// Expected Gaussian log-likelihood under isotropic `q`.
fn isotropic_expected_loglik<T: Scalar>(
    mean: ArrayView1<T>,
    variance: T,
    phi: ArrayView2<T>,
    y: ArrayView1<T>,
    noise_std: T,
) -> T {
    let n = T::from_usize_lossy(y.len());
    let nv = noise_std * noise_std;
    let tr = crate::linalg::frobenius_sq(phi);
    -T::lit(0.5) * (n * (T::TAU() * nv).ln() + residual_sq(phi, y, mean) / nv + variance * tr / nv)
}

/// KL from isotropic `q` to the standard normal prior on `v`.
pub fn isotropic_kl_to_standard<T: Scalar>(q: &IsotropicGaussianQ<T>) -> T {
    let r = T::from_usize_lossy(q.dim());
    T::lit(0.5) * (q.variance * r + q.mean.dot(&q.mean) - r - r * q.variance.ln())
}

/// κ-tempered ELBo for isotropic `q`: `κ·E_q[log p(y|v)] − KL(q ‖ N(0, I))`.
pub fn elbo_isotropic<T: Scalar>(
    q: &IsotropicGaussianQ<T>,
    phi: &FeatureMatrix<T>,
    y: ArrayView1<T>,
    noise_std: T,
    kappa: T,
) -> Result<ObjectiveBreakdown<T>> {
    check_noise(noise_std)?;
    check_targets(phi, y)?;
    ensure(kappa > T::zero(), || format!("kappa must be positive, got {kappa}"))?;
    ensure(q.variance > T::zero(), || "variance must be positive".into())?;
    if q.dim() != phi.feature_count() {
        return Err(shape_error("q dimension vs feature count", phi.feature_count(), q.dim()));
    }
    let ell = isotropic_expected_loglik(q.mean.view(), q.variance, phi.values(), y, noise_std);
    Ok(ObjectiveBreakdown::new(ell, isotropic_kl_to_standard(q), kappa))
}

/// Maximizer of [`elbo_isotropic`] over the shared variance:
/// `R / (κ·tr(ΦΦᵀ)/σ_y² + R)`. κ = 1 tends to the prior variance as R grows;
/// κ = R/N tends to `(σ_k²/σ_y² + 1)⁻¹`.
pub fn optimal_isotropic_variance<T: Scalar>(phi: &FeatureMatrix<T>, noise_std: T, kappa: T) -> Result<T> {
    check_noise(noise_std)?;
    ensure(kappa > T::zero(), || format!("kappa must be positive, got {kappa}"))?;
    let r = T::from_usize_lossy(phi.feature_count());
    Ok(r / (kappa * phi.trace_gram() / (noise_std * noise_std) + r))
}

/// Predictive mean and variance per row of `Φ*`. Variance includes `σ_y²`.
pub fn predictive_posterior<T: Scalar, Q: WeightPosterior<T>>(
    q: &Q,
    phi_star: &FeatureMatrix<T>,
    noise_std: T,
) -> Result<(Array1<T>, Array1<T>)> {
    check_noise(noise_std)?;
    let mean = q.weight_mean();
    if mean.len() != phi_star.feature_count() {
        return Err(shape_error("posterior dimension vs feature count", phi_star.feature_count(), mean.len()));
    }
    let nv = noise_std * noise_std;
    let phi = phi_star.values();
    let mu = phi.dot(&mean);
    let var = phi
        .axis_iter(Axis(0))
        .map(|row| q.weight_quadratic(row) + nv)
        .collect();
    Ok((mu, var))
}

/// Gaussian likelihood of RFF regression as a trainer model. When the
/// kernel is learned, the hyperparameter vector is
/// `[softplus⁻¹(ℓ_k), softplus⁻¹(σ_k)]`.
#[derive(Debug, Clone)]
pub struct RffRegressionLikelihood<T> {
    feature_map: RffFeatureMap<T>,
    inputs: Array2<T>,
    targets: Array1<T>,
    noise_std: T,
    kernel: KernelParams<T>,
    learn_kernel: bool,
    // cached when the kernel is fixed
    fixed_features: Option<Array2<T>>,
}

impl<T: Scalar> RffRegressionLikelihood<T> {
    pub fn new(
        feature_map: RffFeatureMap<T>,
        inputs: Array2<T>,
        targets: Array1<T>,
        noise_std: T,
        kernel: KernelParams<T>,
        learn_kernel: bool,
    ) -> Result<Self> {
        check_noise(noise_std)?;
        kernel.validate()?;
        if inputs.nrows() != targets.len() {
            return Err(shape_error("targets length vs input rows", inputs.nrows(), targets.len()));
        }
        let fixed_features = if learn_kernel {
            None
        } else {
            Some(feature_map.featurize(&kernel, inputs.view())?.into_values())
        };
        Ok(Self {
            feature_map,
            inputs,
            targets,
            noise_std,
            kernel,
            learn_kernel,
            fixed_features,
        })
    }

    pub fn feature_map(&self) -> &RffFeatureMap<T> {
        &self.feature_map
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }

    /// Initial unconstrained hyperparameters.
    pub fn initial_hyper(&self) -> Vec<T> {
        if self.learn_kernel {
            vec![
                softplus_inverse(self.kernel.length_scale),
                softplus_inverse(self.kernel.output_scale),
            ]
        } else {
            Vec::new()
        }
    }

    /// Kernel parameters encoded by `hyper`.
    pub fn kernel_from_hyper(&self, hyper: &[T]) -> KernelParams<T> {
        if self.learn_kernel {
            KernelParams {
                length_scale: softplus(hyper[0]),
                output_scale: softplus(hyper[1]),
            }
        } else {
            self.kernel
        }
    }

    fn features(&self, hyper: &[T]) -> Result<(Array2<T>, Option<Array2<T>>, KernelParams<T>)> {
        match &self.fixed_features {
            Some(phi) => Ok((phi.clone(), None, self.kernel)),
            None => {
                let k = self.kernel_from_hyper(hyper);
                let (phi, dl) = self.feature_map.featurize_with_length_grad(&k, self.inputs.view())?;
                Ok((phi.into_values(), Some(dl), k))
            }
        }
    }

    fn chain(&self, hyper: &[T], d_length: T, d_output: T) -> Vec<T> {
        if self.learn_kernel {
            vec![d_length * sigmoid(hyper[0]), d_output * sigmoid(hyper[1])]
        } else {
            Vec::new()
        }
    }
}

impl<T: Scalar> LikelihoodModel<T> for RffRegressionLikelihood<T> {
    fn param_dim(&self) -> usize {
        self.feature_map.feature_count()
    }

    fn data_len(&self) -> usize {
        self.targets.len()
    }

    fn hyper_dim(&self) -> usize {
        if self.learn_kernel {
            2
        } else {
            0
        }
    }

    fn log_likelihood(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<T> {
        let computed;
        let phi = match &self.fixed_features {
            Some(phi) => phi.view(),
            None => {
                let k = self.kernel_from_hyper(hyper);
                computed = self.feature_map.featurize(&k, self.inputs.view())?.into_values();
                computed.view()
            }
        };
        let n = T::from_usize_lossy(self.targets.len());
        let nv = self.noise_std * self.noise_std;
        let rss = residual_sq(phi, self.targets.view(), theta);
        Ok(-T::lit(0.5) * (n * (T::TAU() * nv).ln() + rss / nv))
    }

    fn log_likelihood_grad(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<LogLikGrad<T>> {
        let (phi, dphi_dl, k) = self.features(hyper)?;
        let n = T::from_usize_lossy(self.targets.len());
        let nv = self.noise_std * self.noise_std;
        let pred = phi.dot(&theta);
        let resid = &self.targets - &pred;
        let value = -T::lit(0.5) * (n * (T::TAU() * nv).ln() + resid.dot(&resid) / nv);
        let g_theta = phi.t().dot(&resid) / nv;
        let hyper_grad = match dphi_dl {
            Some(dl) => {
                // ∂ℓℓ/∂Φ = r θᵀ / σ_y²
                let d_len = resid.dot(&dl.dot(&theta)) / nv;
                let d_out = resid.dot(&pred) / (nv * k.output_scale);
                self.chain(hyper, d_len, d_out)
            }
            None => Vec::new(),
        };
        Ok(LogLikGrad {
            value,
            theta: g_theta,
            hyper: hyper_grad,
        })
    }

    fn expected_log_likelihood_grad(
        &self,
        mean: ArrayView1<T>,
        variance: T,
        hyper: &[T],
    ) -> Option<Result<ExpectedLogLikGrad<T>>> {
        Some((|| {
            let (phi, dphi_dl, k) = self.features(hyper)?;
            let nv = self.noise_std * self.noise_std;
            let value = isotropic_expected_loglik(mean, variance, phi.view(), self.targets.view(), self.noise_std);
            let pred = phi.dot(&mean);
            let resid = &self.targets - &pred;
            let tr = crate::linalg::frobenius_sq(phi.view());
            let g_mean = phi.t().dot(&resid) / nv;
            let g_var = -tr / (T::lit(2.0) * nv);
            let hyper_grad = match dphi_dl {
                Some(dl) => {
                    // ∂E/∂Φ = (r mᵀ − s² Φ) / σ_y²
                    let phi_dl: T = phi.iter().zip(dl.iter()).map(|(&a, &b)| a * b).sum();
                    let d_len = (resid.dot(&dl.dot(&mean)) - variance * phi_dl) / nv;
                    let d_out = (resid.dot(&pred) - variance * tr) / (nv * k.output_scale);
                    self.chain(hyper, d_len, d_out)
                }
                None => Vec::new(),
            };
            Ok(ExpectedLogLikGrad {
                value,
                mean: g_mean,
                variance: g_var,
                hyper: hyper_grad,
            })
        })())
    }
}

/// Variational RFF regression under the standard normal prior on `v`,
/// starting from `v̄ = 0` and the configured `σ̄_q`.
#[allow(clippy::too_many_arguments)]
pub fn fit_rff_regression<T: Scalar>(
    feature_map: &RffFeatureMap<T>,
    data: &RegressionData<T>,
    init_kernel: KernelParams<T>,
    noise_std: T,
    learn_kernel: bool,
    config: &TemperedObjectiveConfig<T>,
    learning_rates: &[T],
    epochs: usize,
) -> Result<VariationalFit<T>> {
    let likelihood = RffRegressionLikelihood::new(
        feature_map.clone(),
        data.inputs.clone(),
        data.targets.clone(),
        noise_std,
        init_kernel,
        learn_kernel,
    )?;
    let r = feature_map.feature_count();
    let blocks = [PriorBlock::fixed(GaussianPrior::standard(r), ScaleHyper::Lambda)];
    let init = VariationalState::new(Array1::zeros(r), config.init_sigma_q, likelihood.initial_hyper(), &blocks);
    fit(&likelihood, &blocks, &init, config, learning_rates, epochs)
}

struct OutputScaleGrid<'a, T> {
    feature_map: &'a RffFeatureMap<T>,
    data: &'a RegressionData<T>,
    length_scale: T,
    noise_std: T,
}

impl<T: Scalar> GridProblem<T> for OutputScaleGrid<'_, T> {
    type Model = RffRegressionLikelihood<T>;

    fn build(&self, rows: &[usize], cell: &[T]) -> Result<(Self::Model, GaussianPenalty<T>, Array1<T>)> {
        ensure(cell.len() == 1, || format!("grid cells need [output_scale], got {} values", cell.len()))?;
        let part = self.data.select(rows);
        let kernel = KernelParams::new(self.length_scale, cell[0])?;
        let model = RffRegressionLikelihood::new(
            self.feature_map.clone(),
            part.inputs,
            part.targets,
            self.noise_std,
            kernel,
            false,
        )?;
        let r = self.feature_map.feature_count();
        let penalty = GaussianPenalty::new(vec![PenaltyBlock::isotropic(Array1::zeros(r), T::one())])?;
        Ok((model, penalty, Array1::zeros(r)))
    }
}

/// MAP point estimates of `v` at a fixed length-scale for each output scale
/// in `output_scales`, selected by validation NLL on a 1/5 holdout and
/// refitted on all rows.
#[allow(clippy::too_many_arguments)]
pub fn fit_map_grid_search_regression<T: Scalar>(
    feature_map: &RffFeatureMap<T>,
    data: &RegressionData<T>,
    length_scale: T,
    noise_std: T,
    output_scales: &[T],
    learning_rates: &[T],
    epochs: usize,
    split_seed: u64,
) -> Result<GridSearchFit<T>> {
    let (train, valid) = holdout_split(data.len(), 5, split_seed)?;
    let problem = OutputScaleGrid {
        feature_map,
        data,
        length_scale,
        noise_std,
    };
    let grid: Vec<Vec<T>> = output_scales.iter().map(|&s| vec![s]).collect();
    fit_map_grid_search(&problem, &grid, learning_rates, epochs, OptimizerKind::Adam, &train, &valid)
}
