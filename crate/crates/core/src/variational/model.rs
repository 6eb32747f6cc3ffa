use ndarray::{Array1, ArrayView1};

use crate::error::Result;
use crate::scalar::Scalar;

/// `log p(y_{1:N} | θ)` and its gradients.
#[derive(Debug, Clone)]
pub struct LogLikGrad<T> {
    pub value: T,
    /// ∂/∂θ
    pub theta: Array1<T>,
    /// ∂/∂η for the model's unconstrained, gradient-learned hyperparameters.
    pub hyper: Vec<T>,
}

/// Closed-form `E_q[log p(y | θ)]` under isotropic `q` and its gradients.
#[derive(Debug, Clone)]
pub struct ExpectedLogLikGrad<T> {
    pub value: T,
    pub mean: Array1<T>,
    /// ∂/∂σ̄_q²
    pub variance: T,
    pub hyper: Vec<T>,
}

/// A likelihood over a flat parameter vector θ, with the training data
/// baked in. Hyperparameters learned by gradient live in an unconstrained
/// vector the model decodes itself (e.g. through softplus).
pub trait LikelihoodModel<T: Scalar>: Sync {
    /// Dimension D of θ.
    fn param_dim(&self) -> usize;

    /// Number of training instances N.
    fn data_len(&self) -> usize;

    /// Length of the gradient-learned hyperparameter vector.
    fn hyper_dim(&self) -> usize {
        0
    }

    /// Sum over instances of `log p(y_i | θ)`.
    fn log_likelihood(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<T>;

    fn log_likelihood_grad(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<LogLikGrad<T>>;

    /// Closed-form expectation, when the model has one.
    fn expected_log_likelihood_grad(
        &self,
        _mean: ArrayView1<T>,
        _variance: T,
        _hyper: &[T],
    ) -> Option<Result<ExpectedLogLikGrad<T>>> {
        None
    }
}
