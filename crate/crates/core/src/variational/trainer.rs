//! The tempered-ELBo training loop: reparameterized gradient steps on the
//! variational parameters and gradient-learned hyperparameters, with
//! closed-form prior-scale updates after every step.

use ndarray::{s, Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::posterior::{standard_normal_vector, IsotropicGaussianQ, ObjectiveBreakdown};
use crate::rng::{rng_from_seed, stream_seed, Stream};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};
use crate::variational::estimators::mc_expected_loglik;
use crate::variational::model::LikelihoodModel;
use crate::variational::prior::{kl_from_parts, GaussianPrior, ScaleHyper};

/// How κ is resolved from the model's D and N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaPolicy<T> {
    /// κ = 1.
    Standard,
    /// κ = D/N.
    DataEmphasized,
    Custom(T),
}

impl<T: Scalar> KappaPolicy<T> {
    pub fn resolve(&self, param_dim: usize, data_len: usize) -> Result<T> {
        let kappa = match *self {
            Self::Standard => T::one(),
            Self::DataEmphasized => {
                ensure(data_len > 0, || "data-emphasized kappa needs N > 0".into())?;
                T::from_usize_lossy(param_dim) / T::from_usize_lossy(data_len)
            }
            Self::Custom(k) => k,
        };
        ensure(kappa > T::zero() && kappa.is_finite(), || {
            format!("kappa must be positive and finite, got {kappa}")
        })?;
        Ok(kappa)
    }
}

/// How `E_q[log p(y|θ)]` enters the training gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    /// Reparameterized samples, `sample_count_train` per step.
    #[default]
    MonteCarlo,
    /// The model's exact expectation; errors if it has none.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperedObjectiveConfig<T> {
    pub kappa: KappaPolicy<T>,
    pub sample_count_train: usize,
    pub sample_count_eval: usize,
    pub seed: u64,
    pub expectation: ExpectationMode,
    pub optimizer: OptimizerKind,
    /// Starting σ̄_q.
    pub init_sigma_q: T,
}

impl<T: Scalar> TemperedObjectiveConfig<T> {
    pub fn new(kappa: KappaPolicy<T>, seed: u64) -> Self {
        Self {
            kappa,
            sample_count_train: 1,
            sample_count_eval: 10,
            seed,
            expectation: ExpectationMode::MonteCarlo,
            optimizer: OptimizerKind::Adam,
            init_sigma_q: T::lit(0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sample_count_train >= 1 && self.sample_count_eval >= 1, || {
            "sample counts must be at least 1".into()
        })?;
        ensure(self.init_sigma_q > T::zero() && self.init_sigma_q.is_finite(), || {
            format!("init_sigma_q must be positive, got {}", self.init_sigma_q)
        })?;
        if let KappaPolicy::Custom(k) = self.kappa {
            ensure(k > T::zero() && k.is_finite(), || format!("custom kappa must be positive, got {k}"))?;
        }
        Ok(())
    }
}

/// A contiguous slice of θ with its own Gaussian prior. Blocks are laid out
/// in order and must cover θ exactly.
#[derive(Debug, Clone)]
pub struct PriorBlock<T> {
    pub prior: GaussianPrior<T>,
    /// Which trace column the block's scale reports to.
    pub role: ScaleHyper,
    /// Replace the scale by its closed-form optimum after every step.
    pub learn_scale: bool,
}

impl<T: Scalar> PriorBlock<T> {
    pub fn fixed(prior: GaussianPrior<T>, role: ScaleHyper) -> Self {
        Self {
            prior,
            role,
            learn_scale: false,
        }
    }

    pub fn learned(prior: GaussianPrior<T>, role: ScaleHyper) -> Self {
        Self {
            prior,
            role,
            learn_scale: true,
        }
    }
}

fn check_blocks<T: Scalar>(blocks: &[PriorBlock<T>], dim: usize) -> Result<()> {
    ensure(!blocks.is_empty(), || "at least one prior block is required".into())?;
    let total: usize = blocks.iter().map(|b| b.prior.dim()).sum();
    ensure(total == dim, || {
        format!("prior blocks cover {total} parameters but the model has {dim}")
    })
}

/// Variational parameters ψ = (mean, ρ) with σ̄_q = softplus(ρ), the
/// unconstrained hyperparameters η and the current prior scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState<T> {
    pub mean: Array1<T>,
    pub rho: T,
    pub hyper: Vec<T>,
    pub scales: Vec<T>,
}

impl<T: Scalar> VariationalState<T> {
    pub fn new(mean: Array1<T>, sigma_q: T, hyper: Vec<T>, blocks: &[PriorBlock<T>]) -> Self {
        Self {
            mean,
            rho: softplus_inverse(sigma_q),
            hyper,
            scales: blocks.iter().map(|b| b.prior.scale).collect(),
        }
    }

    pub fn sigma_q(&self) -> T {
        softplus(self.rho)
    }

    pub fn sigma_q_sq(&self) -> T {
        let s = self.sigma_q();
        s * s
    }

    pub fn posterior(&self) -> Result<IsotropicGaussianQ<T>> {
        IsotropicGaussianQ::new(self.mean.clone(), self.sigma_q_sq())
    }

    fn scale_for(&self, blocks: &[PriorBlock<T>], role: ScaleHyper) -> T {
        blocks
            .iter()
            .zip(&self.scales)
            .find(|(b, _)| b.role == role)
            .map_or(T::one(), |(_, &s)| s)
    }
}

/// Gradient of an objective with respect to (mean, ρ, η).
#[derive(Debug, Clone)]
pub struct StateGradient<T> {
    pub mean: Array1<T>,
    pub rho: T,
    pub hyper: Vec<T>,
}

/// Sum of block KLs and its gradient with respect to the mean and σ̄_q².
fn kl_with_grad<T: Scalar>(
    blocks: &[PriorBlock<T>],
    state: &VariationalState<T>,
) -> Result<(T, Array1<T>, T)> {
    let var = state.sigma_q_sq();
    let mut kl = T::zero();
    let mut grad_mean = Array1::zeros(state.mean.len());
    let mut grad_var = T::zero();
    let mut start = 0;
    for (block, &scale) in blocks.iter().zip(&state.scales) {
        let prior = &block.prior;
        let len = prior.dim();
        let m = state.mean.slice(s![start..start + len]);
        let delta = &m - &prior.mean;
        let solved = prior.covariance.apply_inverse(delta.view())?;
        let maha = delta.dot(&solved).max(T::zero());
        let tr = prior.covariance.trace_inverse();
        kl += kl_from_parts(len, var, scale, tr, maha, prior.covariance.log_det());
        grad_mean
            .slice_mut(s![start..start + len])
            .assign(&solved.mapv(|v| v / scale));
        grad_var += T::lit(0.5) * (tr / scale - T::from_usize_lossy(len) / var);
        start += len;
    }
    Ok((kl, grad_mean, grad_var))
}

/// Total KL between the state's `q` and the block priors at its scales.
pub fn total_kl<T: Scalar>(blocks: &[PriorBlock<T>], state: &VariationalState<T>) -> Result<T> {
    check_blocks(blocks, state.mean.len())?;
    Ok(kl_with_grad(blocks, state)?.0)
}

/// Single-draw objective `κ·log p(y | mean + σ̄_q ε) − KL` and its exact
/// gradient, the estimator every training step ascends. Averaging over ε
/// gives the gradient of the tempered ELBo.
pub fn sample_objective_and_grad<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    blocks: &[PriorBlock<T>],
    state: &VariationalState<T>,
    eps: &[Array1<T>],
    kappa: T,
) -> Result<(ObjectiveBreakdown<T>, StateGradient<T>)> {
    check_blocks(blocks, state.mean.len())?;
    ensure(!eps.is_empty(), || "at least one noise draw is required".into())?;
    let sigma = state.sigma_q();
    let count = T::from_usize_lossy(eps.len());
    let mut ell = T::zero();
    let mut g_mean = Array1::zeros(state.mean.len());
    let mut g_sigma = T::zero();
    let mut g_hyper = vec![T::zero(); model.hyper_dim()];
    for e in eps {
        let theta = &state.mean + &e.mapv(|v| v * sigma);
        let g = model.log_likelihood_grad(theta.view(), &state.hyper)?;
        ell += g.value / count;
        g_sigma += g.theta.dot(e) / count;
        g_mean.scaled_add(T::one() / count, &g.theta);
        for (acc, v) in g_hyper.iter_mut().zip(&g.hyper) {
            *acc += *v / count;
        }
    }
    let (kl, kl_mean, kl_var) = kl_with_grad(blocks, state)?;
    let breakdown = ObjectiveBreakdown::new(ell, kl, kappa);
    let grad = StateGradient {
        mean: g_mean.mapv(|v| v * kappa) - &kl_mean,
        rho: (kappa * g_sigma - T::lit(2.0) * sigma * kl_var) * sigmoid(state.rho),
        hyper: g_hyper.into_iter().map(|v| v * kappa).collect(),
    };
    Ok((breakdown, grad))
}

/// Exact tempered ELBo and its gradient, for models with a closed-form
/// expected log-likelihood.
pub fn closed_form_objective_and_grad<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    blocks: &[PriorBlock<T>],
    state: &VariationalState<T>,
    kappa: T,
) -> Result<(ObjectiveBreakdown<T>, StateGradient<T>)> {
    check_blocks(blocks, state.mean.len())?;
    let sigma = state.sigma_q();
    let g = model
        .expected_log_likelihood_grad(state.mean.view(), sigma * sigma, &state.hyper)
        .ok_or_else(|| Error::Input("model has no closed-form expected log-likelihood".into()))??;
    let (kl, kl_mean, kl_var) = kl_with_grad(blocks, state)?;
    let two_sigma = T::lit(2.0) * sigma;
    let grad = StateGradient {
        mean: g.mean.mapv(|v| v * kappa) - &kl_mean,
        rho: (kappa * g.variance - kl_var) * two_sigma * sigmoid(state.rho),
        hyper: g.hyper.into_iter().map(|v| v * kappa).collect(),
    };
    Ok((ObjectiveBreakdown::new(g.value, kl, kappa), grad))
}

/// Replace each learned block scale by `(σ̄²·tr Σ_p⁻¹ + (μ_p−m)ᵀΣ_p⁻¹(μ_p−m))/len`,
/// which is λ* for a backbone block and τ* for a head block.
pub fn apply_closed_form_scales<T: Scalar>(blocks: &[PriorBlock<T>], state: &mut VariationalState<T>) -> Result<()> {
    let var = state.sigma_q_sq();
    let mut start = 0;
    for (i, block) in blocks.iter().enumerate() {
        let len = block.prior.dim();
        if block.learn_scale {
            let m = state.mean.slice(s![start..start + len]);
            let delta = &m - &block.prior.mean;
            let maha = block.prior.covariance.mahalanobis(delta.view())?;
            state.scales[i] = (var * block.prior.covariance.trace_inverse() + maha) / T::from_usize_lossy(len);
        }
        start += len;
    }
    Ok(())
}

/// One logged epoch. `total = κ·expected_loglik − kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<T> {
    pub epoch: usize,
    pub expected_loglik: T,
    pub kl: T,
    pub total: T,
    pub lambda: T,
    pub tau: T,
    pub sigma_q_sq: T,
}

/// Column names of the trace CSV, in order.
pub const TRACE_COLUMNS: [&str; 7] = ["epoch", "expected_loglik", "kl", "total", "lambda", "tau", "sigma_q_sq"];

/// The outcome of one learning-rate candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRun<T> {
    pub learning_rate: T,
    pub trace: Vec<TraceRow<T>>,
    /// Selection objective, estimated after the last epoch.
    pub final_objective: Option<ObjectiveBreakdown<T>>,
    pub failure: Option<String>,
    pub state: VariationalState<T>,
}

impl<T: Scalar> CandidateRun<T> {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.final_objective.is_some_and(|o| o.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalFit<T> {
    pub kappa: T,
    pub candidates: Vec<CandidateRun<T>>,
    pub selected: usize,
}

impl<T: Scalar> VariationalFit<T> {
    pub fn winner(&self) -> &CandidateRun<T> {
        &self.candidates[self.selected]
    }

    pub fn posterior(&self) -> Result<IsotropicGaussianQ<T>> {
        self.winner().state.posterior()
    }
}

/// Estimate the configured objective at `state` for candidate selection.
/// Monte Carlo draws come from the evaluation stream, disjoint from training.
pub fn evaluate_objective<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    blocks: &[PriorBlock<T>],
    state: &VariationalState<T>,
    config: &TemperedObjectiveConfig<T>,
    kappa: T,
) -> Result<ObjectiveBreakdown<T>> {
    match config.expectation {
        ExpectationMode::ClosedForm => Ok(closed_form_objective_and_grad(model, blocks, state, kappa)?.0),
        ExpectationMode::MonteCarlo => {
            let q = state.posterior()?;
            let est = mc_expected_loglik(
                &q,
                |theta| model.log_likelihood(theta, &state.hyper),
                config.sample_count_eval,
                stream_seed(config.seed, Stream::McEval),
            )?;
            Ok(ObjectiveBreakdown::new(est.value, total_kl(blocks, state)?, kappa))
        }
    }
}

fn pack<T: Scalar>(state: &VariationalState<T>) -> Vec<T> {
    let mut v = state.mean.to_vec();
    v.push(state.rho);
    v.extend_from_slice(&state.hyper);
    v
}

fn unpack<T: Scalar>(state: &mut VariationalState<T>, packed: &[T]) {
    let d = state.mean.len();
    state.mean.assign(&ArrayView1::from(&packed[..d]));
    state.rho = packed[d];
    state.hyper.copy_from_slice(&packed[d + 1..]);
}

fn grad_vec<T: Scalar>(g: &StateGradient<T>) -> Vec<T> {
    let mut v = g.mean.to_vec();
    v.push(g.rho);
    v.extend_from_slice(&g.hyper);
    v
}

fn run_candidate<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    blocks: &[PriorBlock<T>],
    init: &VariationalState<T>,
    config: &TemperedObjectiveConfig<T>,
    kappa: T,
    learning_rate: T,
    epochs: usize,
) -> CandidateRun<T> {
    let mut state = init.clone();
    let mut trace = Vec::with_capacity(epochs);
    let mut rng = rng_from_seed(stream_seed(config.seed, Stream::McTrain));
    let mut packed = pack(&state);
    let mut opt = Optimizer::new(config.optimizer, learning_rate, packed.len());
    let dim = state.mean.len();
    let mut failure = None;

    for epoch in 0..epochs {
        let step = match config.expectation {
            ExpectationMode::MonteCarlo => {
                let eps: Vec<Array1<T>> = (0..config.sample_count_train)
                    .map(|_| standard_normal_vector(dim, &mut rng))
                    .collect();
                sample_objective_and_grad(model, blocks, &state, &eps, kappa).and_then(|(obj, grad)| {
                    // log the exact expectation when the model has one
                    match model.expected_log_likelihood_grad(state.mean.view(), state.sigma_q_sq(), &state.hyper) {
                        Some(exact) => Ok((ObjectiveBreakdown::new(exact?.value, obj.kl, kappa), grad)),
                        None => Ok((obj, grad)),
                    }
                })
            }
            ExpectationMode::ClosedForm => closed_form_objective_and_grad(model, blocks, &state, kappa),
        };
        let (obj, grad) = match step {
            Ok(v) => v,
            Err(e) => {
                failure = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        };
        trace.push(TraceRow {
            epoch,
            expected_loglik: obj.expected_loglik,
            kl: obj.kl,
            total: obj.total,
            lambda: state.scale_for(blocks, ScaleHyper::Lambda),
            tau: state.scale_for(blocks, ScaleHyper::Tau),
            sigma_q_sq: state.sigma_q_sq(),
        });
        let g = grad_vec(&grad);
        if !obj.is_finite() || g.iter().any(|v| !v.is_finite()) {
            failure = Some(format!("epoch {epoch}: non-finite objective or gradient"));
            break;
        }
        opt.ascend(&mut packed, &g);
        unpack(&mut state, &packed);
        if let Err(e) = apply_closed_form_scales(blocks, &mut state) {
            failure = Some(format!("epoch {epoch}: {e}"));
            break;
        }
        if !state.sigma_q_sq().is_finite() || state.sigma_q_sq() <= T::zero() || state.scales.iter().any(|s| !s.is_finite() || *s <= T::zero()) {
            failure = Some(format!("epoch {epoch}: variance left the positive reals"));
            break;
        }
    }

    let final_objective = match failure {
        Some(_) => None,
        None => match evaluate_objective(model, blocks, &state, config, kappa) {
            Ok(o) if o.is_finite() => Some(o),
            Ok(_) => {
                failure = Some("non-finite final objective".into());
                None
            }
            Err(e) => {
                failure = Some(format!("final evaluation: {e}"));
                None
            }
        },
    };
    CandidateRun {
        learning_rate,
        trace,
        final_objective,
        failure,
        state,
    }
}

/// Fit `q` and η by maximizing `κ·E_q[log p(y|θ)] − KL(q‖p)` once per
/// learning rate, then keep the candidate with the highest evaluated
/// objective (ties go to the earliest). Candidates run in parallel; results
/// are independent of thread scheduling.
pub fn fit<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    blocks: &[PriorBlock<T>],
    init: &VariationalState<T>,
    config: &TemperedObjectiveConfig<T>,
    learning_rates: &[T],
    epochs: usize,
) -> Result<VariationalFit<T>> {
    config.validate()?;
    ensure(!learning_rates.is_empty(), || "at least one learning rate is required".into())?;
    ensure(epochs >= 1, || "epochs must be at least 1".into())?;
    ensure(learning_rates.iter().all(|lr| *lr >= T::zero() && lr.is_finite()), || {
        "learning rates must be non-negative".into()
    })?;
    ensure(init.mean.len() == model.param_dim(), || {
        format!("initial mean has length {} but the model has {} parameters", init.mean.len(), model.param_dim())
    })?;
    ensure(init.hyper.len() == model.hyper_dim(), || {
        format!("initial hyper has length {} but the model expects {}", init.hyper.len(), model.hyper_dim())
    })?;
    ensure(init.scales.len() == blocks.len(), || "one scale per prior block is required".into())?;
    check_blocks(blocks, model.param_dim())?;
    if config.expectation == ExpectationMode::ClosedForm {
        ensure(
            model
                .expected_log_likelihood_grad(init.mean.view(), init.sigma_q_sq(), &init.hyper)
                .is_some(),
            || "closed-form expectation requested but the model has none".into(),
        )?;
    }
    let kappa = config.kappa.resolve(model.param_dim(), model.data_len())?;

    let candidates: Vec<CandidateRun<T>> = learning_rates
        .par_iter()
        .map(|&lr| run_candidate(model, blocks, init, config, kappa, lr, epochs))
        .collect();

    let mut selected = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.succeeded() {
            continue;
        }
        let total = c.final_objective.map(|o| o.total).unwrap_or(T::neg_infinity());
        match selected {
            Some((_, best)) if total <= best => {}
            _ => selected = Some((i, total)),
        }
    }
    match selected {
        Some((selected, _)) => Ok(VariationalFit {
            kappa,
            candidates,
            selected,
        }),
        None => Err(Error::AllCandidatesFailed(
            candidates
                .iter()
                .map(|c| {
                    format!(
                        "lr={}: {}",
                        c.learning_rate,
                        c.failure.as_deref().unwrap_or("no finite objective")
                    )
                })
                .collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variational::model::{ExpectedLogLikGrad, LogLikGrad};
    use ndarray::array;

    /// `log p(y|θ) = −½ Σ_i ‖y_i − θ‖²` with closed-form expectation.
    struct GaussianMean {
        ys: Vec<Array1<f64>>,
    }

    impl LikelihoodModel<f64> for GaussianMean {
        fn param_dim(&self) -> usize {
            self.ys[0].len()
        }
        fn data_len(&self) -> usize {
            self.ys.len()
        }
        fn log_likelihood(&self, theta: ArrayView1<f64>, _: &[f64]) -> Result<f64> {
            Ok(self.ys.iter().map(|y| -0.5 * (y - &theta).mapv(|v| v * v).sum()).sum())
        }
        fn log_likelihood_grad(&self, theta: ArrayView1<f64>, h: &[f64]) -> Result<LogLikGrad<f64>> {
            let mut g = Array1::zeros(theta.len());
            for y in &self.ys {
                g += &(y - &theta);
            }
            Ok(LogLikGrad {
                value: self.log_likelihood(theta, h)?,
                theta: g,
                hyper: vec![],
            })
        }
        fn expected_log_likelihood_grad(
            &self,
            mean: ArrayView1<f64>,
            variance: f64,
            h: &[f64],
        ) -> Option<Result<ExpectedLogLikGrad<f64>>> {
            let n = self.ys.len() as f64;
            let d = mean.len() as f64;
            Some(self.log_likelihood_grad(mean, h).map(|g| ExpectedLogLikGrad {
                value: g.value - 0.5 * n * d * variance,
                mean: g.theta,
                variance: -0.5 * n * d,
                hyper: vec![],
            }))
        }
    }

    fn toy() -> GaussianMean {
        GaussianMean {
            ys: vec![array![1.0, -1.0], array![2.0, 0.0], array![0.0, 0.5]],
        }
    }

    fn learned_block(dim: usize) -> Vec<PriorBlock<f64>> {
        vec![PriorBlock::learned(GaussianPrior::scaled_identity(Array1::zeros(dim), 1.0).unwrap(), ScaleHyper::Lambda)]
    }

    #[test]
    fn zero_learning_rate_keeps_psi_but_updates_scales() {
        let model = toy();
        let blocks = learned_block(2);
        let init = VariationalState::new(array![0.5, 0.5], 0.3, vec![], &blocks);
        let config = TemperedObjectiveConfig::new(KappaPolicy::Standard, 7);
        let fit = fit(&model, &blocks, &init, &config, &[0.0], 3).unwrap();
        let st = &fit.winner().state;
        assert_eq!(st.mean, init.mean);
        assert_eq!(st.rho, init.rho);
        let expected = (0.09 * 2.0 + 0.5) / 2.0;
        assert!((st.scales[0] - expected).abs() < 1e-12);
        assert!((fit.winner().trace[1].lambda - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_learning_rates_give_identical_candidates() {
        let model = toy();
        let blocks = learned_block(2);
        let init = VariationalState::new(Array1::zeros(2), 0.5, vec![], &blocks);
        let config = TemperedObjectiveConfig::new(KappaPolicy::DataEmphasized, 3);
        let fit = fit(&model, &blocks, &init, &config, &[0.01, 0.01], 50).unwrap();
        assert_eq!(fit.candidates[0], fit.candidates[1]);
        assert_eq!(fit.selected, 0);
        assert!((fit.kappa - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trace_rows_satisfy_identity() {
        let model = toy();
        let blocks = learned_block(2);
        let init = VariationalState::new(Array1::zeros(2), 0.5, vec![], &blocks);
        let mut config = TemperedObjectiveConfig::new(KappaPolicy::Custom(2.5), 1);
        config.sample_count_train = 3;
        let fit = fit(&model, &blocks, &init, &config, &[0.05], 40).unwrap();
        for row in &fit.winner().trace {
            assert!((row.total - (2.5 * row.expected_loglik - row.kl)).abs() < 1e-12);
            assert!(row.kl >= -1e-9);
            assert_eq!(row.tau, 1.0);
        }
    }

    #[test]
    fn closed_form_training_reaches_the_conjugate_optimum() {
        // fixed N(0, I) prior: optimum mean = Σy/(N+1), variance = 1/(N+1)
        let model = toy();
        let blocks = vec![PriorBlock::fixed(GaussianPrior::standard(2), ScaleHyper::Lambda)];
        let init = VariationalState::new(Array1::zeros(2), 1.0, vec![], &blocks);
        let mut config = TemperedObjectiveConfig::new(KappaPolicy::Standard, 0);
        config.expectation = ExpectationMode::ClosedForm;
        let fit = fit(&model, &blocks, &init, &config, &[0.05], 3000).unwrap();
        let st = &fit.winner().state;
        assert!((st.mean[0] - 0.75).abs() < 1e-4);
        assert!((st.mean[1] + 0.125).abs() < 1e-4);
        assert!((st.sigma_q_sq() - 0.25).abs() < 1e-4);
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        let model = toy();
        let blocks = vec![PriorBlock::fixed(
            GaussianPrior::scaled_identity(array![0.3, -0.2], 1.7).unwrap(),
            ScaleHyper::Lambda,
        )];
        let state = VariationalState::new(array![0.4, 0.1], 0.6, vec![], &blocks);
        let eps = vec![array![0.7, -1.2], array![-0.3, 0.4]];
        let kappa = 1.3;
        let (_, g) = sample_objective_and_grad(&model, &blocks, &state, &eps, kappa).unwrap();
        let f = |s: &VariationalState<f64>| sample_objective_and_grad(&model, &blocks, s, &eps, kappa).unwrap().0.total;
        let h = 1e-6;
        for i in 0..2 {
            let mut p = state.clone();
            p.mean[i] += h;
            let mut m = state.clone();
            m.mean[i] -= h;
            assert!(((f(&p) - f(&m)) / (2.0 * h) - g.mean[i]).abs() < 1e-6);
        }
        let mut p = state.clone();
        p.rho += h;
        let mut m = state.clone();
        m.rho -= h;
        assert!(((f(&p) - f(&m)) / (2.0 * h) - g.rho).abs() < 1e-6);
    }

    #[test]
    fn all_failed_candidates_are_reported() {
        let model = toy();
        let blocks = learned_block(2);
        let init = VariationalState::new(Array1::zeros(2), 0.5, vec![], &blocks);
        let config = TemperedObjectiveConfig::new(KappaPolicy::Standard, 0);
        let err = fit(&model, &blocks, &init, &config, &[f64::INFINITY], 5);
        assert!(err.is_err());
        let r = fit(&model, &blocks, &init, &config, &[1e300, 1e300], 5);
        match r {
            Err(Error::AllCandidatesFailed(msgs)) => assert_eq!(msgs.len(), 2),
            other => panic!("expected every candidate to fail, got {other:?}"),
        }
    }
}
