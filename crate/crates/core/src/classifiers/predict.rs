//! Class-probability prediction from a fitted parameter vector or from the
//! fitted isotropic posterior.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::classifiers::categorical::softmax_rows;
use crate::error::{ensure, Result};
use crate::posterior::{standard_normal_vector, IsotropicGaussianQ};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// A classifier whose logits are a function of a flat θ and its
/// hyperparameter vector.
pub trait ClassifierModel<T: Scalar>: Sync {
    fn class_count(&self) -> usize;

    fn logits(&self, theta: ArrayView1<T>, hyper: &[T], x: ArrayView2<T>) -> Result<Array2<T>>;
}

/// Softmax of the logits at the posterior mean.
pub fn predict_point<T: Scalar, M: ClassifierModel<T> + ?Sized>(
    model: &M,
    mean: ArrayView1<T>,
    hyper: &[T],
    x: ArrayView2<T>,
) -> Result<Array2<T>> {
    Ok(softmax_rows(model.logits(mean, hyper, x)?.view()))
}

/// Softmax probabilities averaged over `sample_count` reparameterized draws
/// from `q`.
pub fn predict_mc<T: Scalar, M: ClassifierModel<T> + ?Sized>(
    model: &M,
    q: &IsotropicGaussianQ<T>,
    hyper: &[T],
    x: ArrayView2<T>,
    sample_count: usize,
    seed: u64,
) -> Result<Array2<T>> {
    ensure(sample_count >= 1, || "sample_count must be at least 1".into())?;
    let mut rng = rng_from_seed(seed);
    let mut acc = Array2::zeros((x.nrows(), model.class_count()));
    for _ in 0..sample_count {
        let eps = standard_normal_vector(q.dim(), &mut rng);
        let theta = q.reparameterize(eps.view());
        acc += &softmax_rows(model.logits(theta.view(), hyper, x)?.view());
    }
    let s = T::from_usize_lossy(sample_count);
    acc.mapv_inplace(|v| v / s);
    Ok(acc)
}
