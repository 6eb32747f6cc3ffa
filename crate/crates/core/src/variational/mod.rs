//! Tempered variational inference over isotropic Gaussian posteriors.

pub mod estimators;
pub mod lowrank;
pub mod model;
pub mod prior;
pub mod trainer;

pub use estimators::{iwelbo_estimate, mc_expected_loglik, MonteCarloEstimate};
pub use lowrank::{lowrank_logdet, lowrank_mahalanobis, lowrank_trace_inverse, LowRankCovariance};
pub use model::{ExpectedLogLikGrad, LikelihoodModel, LogLikGrad};
pub use prior::{
    kl_head_q_vs_prior, kl_isotropic_dense, kl_isotropic_q_vs_prior, optimal_lambda, optimal_tau,
    second_derivative_at_optimum, GaussianPrior, HeadPrior, PriorCovariance, ScaleHyper,
};
pub use trainer::{
    apply_closed_form_scales, closed_form_objective_and_grad, evaluate_objective, fit, sample_objective_and_grad,
    total_kl, CandidateRun, ExpectationMode, KappaPolicy, PriorBlock, StateGradient, TemperedObjectiveConfig,
    TraceRow, VariationalFit, VariationalState, TRACE_COLUMNS,
};
