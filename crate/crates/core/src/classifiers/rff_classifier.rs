//! Multi-class classification on random Fourier features: logits `V φ(x)`
//! with a `C × R` head and a standard normal prior on `vec(V)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::classifiers::categorical::{categorical_loglik_from_logits, check_labels};
use crate::classifiers::predict::ClassifierModel;
use crate::error::{ensure, Result};
use crate::kernel::{shape_error, KernelParams, RffFeatureMap};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Scalar};
use crate::data::{stratified_split, ClassificationData};
use crate::map::{fit_map_grid_search, GaussianPenalty, GridProblem, GridSearchFit, PenaltyBlock};
use crate::optim::OptimizerKind;
use crate::variational::model::{LikelihoodModel, LogLikGrad};
use crate::variational::prior::{GaussianPrior, ScaleHyper};
use crate::variational::trainer::{fit, PriorBlock, TemperedObjectiveConfig, VariationalFit, VariationalState};

/// θ is `vec(V)` row-major. When the kernel is learned the hyperparameter
/// vector is `[softplus⁻¹(ℓ_k), softplus⁻¹(σ_k)]`.
#[derive(Debug, Clone)]
pub struct RffClassifierLikelihood<T> {
    feature_map: RffFeatureMap<T>,
    inputs: Array2<T>,
    labels: Vec<usize>,
    class_count: usize,
    kernel: KernelParams<T>,
    learn_kernel: bool,
}

impl<T: Scalar> RffClassifierLikelihood<T> {
    pub fn new(
        feature_map: RffFeatureMap<T>,
        inputs: Array2<T>,
        labels: Vec<usize>,
        class_count: usize,
        kernel: KernelParams<T>,
        learn_kernel: bool,
    ) -> Result<Self> {
        ensure(class_count >= 2, || format!("need at least 2 classes, got {class_count}"))?;
        kernel.validate()?;
        if inputs.nrows() != labels.len() {
            return Err(shape_error("labels vs input rows", inputs.nrows(), labels.len()));
        }
        if inputs.ncols() != feature_map.input_dim() {
            return Err(shape_error("input columns", feature_map.input_dim(), inputs.ncols()));
        }
        check_labels(&labels, class_count)?;
        Ok(Self {
            feature_map,
            inputs,
            labels,
            class_count,
            kernel,
            learn_kernel,
        })
    }

    pub fn feature_map(&self) -> &RffFeatureMap<T> {
        &self.feature_map
    }

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

    fn head(&self, theta: ArrayView1<T>) -> Result<Array2<T>> {
        let r = self.feature_map.feature_count();
        if theta.len() != self.class_count * r {
            return Err(shape_error("head parameters", self.class_count * r, theta.len()));
        }
        Ok(theta.to_owned().into_shape_with_order((self.class_count, r)).expect("length checked"))
    }
}

impl<T: Scalar> ClassifierModel<T> for RffClassifierLikelihood<T> {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn logits(&self, theta: ArrayView1<T>, hyper: &[T], x: ArrayView2<T>) -> Result<Array2<T>> {
        let v = self.head(theta)?;
        let phi = self.feature_map.featurize(&self.kernel_from_hyper(hyper), x)?;
        Ok(phi.values().dot(&v.t()))
    }
}

impl<T: Scalar> LikelihoodModel<T> for RffClassifierLikelihood<T> {
    fn param_dim(&self) -> usize {
        self.class_count * self.feature_map.feature_count()
    }

    fn data_len(&self) -> usize {
        self.labels.len()
    }

    fn hyper_dim(&self) -> usize {
        if self.learn_kernel {
            2
        } else {
            0
        }
    }

    fn log_likelihood(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<T> {
        let logits = self.logits(theta, hyper, self.inputs.view())?;
        Ok(categorical_loglik_from_logits(logits.view(), &self.labels)?.0)
    }

    fn log_likelihood_grad(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<LogLikGrad<T>> {
        let v = self.head(theta)?;
        let k = self.kernel_from_hyper(hyper);
        let (phi, dphi_dl) = if self.learn_kernel {
            let (p, d) = self.feature_map.featurize_with_length_grad(&k, self.inputs.view())?;
            (p.into_values(), Some(d))
        } else {
            (self.feature_map.featurize(&k, self.inputs.view())?.into_values(), None)
        };
        let logits = phi.dot(&v.t());
        let (value, g) = categorical_loglik_from_logits(logits.view(), &self.labels)?;
        let g_head = g.t().dot(&phi);
        let hyper_grad = match dphi_dl {
            Some(dl) => {
                let g_phi = g.dot(&v);
                let d_len: T = g_phi.iter().zip(dl.iter()).map(|(&a, &b)| a * b).sum();
                let d_out: T = g_phi.iter().zip(phi.iter()).map(|(&a, &b)| a * b).sum::<T>() / k.output_scale;
                vec![d_len * sigmoid(hyper[0]), d_out * sigmoid(hyper[1])]
            }
            None => Vec::new(),
        };
        Ok(LogLikGrad {
            value,
            theta: Array1::from_iter(g_head.iter().copied()),
            hyper: hyper_grad,
        })
    }
}

/// Variational fit of the head (and the kernel when `learn_kernel`) under
/// the standard normal prior on `vec(V)`, starting from `V̄ = 0`.
pub fn fit_rff_classifier<T: Scalar>(
    likelihood: &RffClassifierLikelihood<T>,
    config: &TemperedObjectiveConfig<T>,
    learning_rates: &[T],
    epochs: usize,
) -> Result<VariationalFit<T>> {
    let d = likelihood.param_dim();
    let blocks = [PriorBlock::fixed(GaussianPrior::standard(d), ScaleHyper::Lambda)];
    let init = VariationalState::new(Array1::zeros(d), config.init_sigma_q, likelihood.initial_hyper(), &blocks);
    fit(likelihood, &blocks, &init, config, learning_rates, epochs)
}

struct OutputScaleGrid<'a, T> {
    feature_map: &'a RffFeatureMap<T>,
    data: &'a ClassificationData<T>,
    length_scale: T,
}

impl<T: Scalar> GridProblem<T> for OutputScaleGrid<'_, T> {
    type Model = RffClassifierLikelihood<T>;

    fn build(&self, rows: &[usize], cell: &[T]) -> Result<(Self::Model, GaussianPenalty<T>, Array1<T>)> {
        ensure(cell.len() == 1, || format!("grid cells need [output_scale], got {} values", cell.len()))?;
        let part = self.data.select(rows);
        let model = RffClassifierLikelihood::new(
            self.feature_map.clone(),
            part.inputs,
            part.labels,
            part.class_count,
            KernelParams::new(self.length_scale, cell[0])?,
            false,
        )?;
        let d = model.param_dim();
        let penalty = GaussianPenalty::new(vec![PenaltyBlock::isotropic(Array1::zeros(d), T::one())])?;
        Ok((model, penalty, Array1::zeros(d)))
    }
}

/// MAP head estimates at a fixed length-scale for each output scale, chosen
/// by validation NLL on a stratified 1/5 holdout and refitted on all rows.
#[allow(clippy::too_many_arguments)]
pub fn fit_map_grid_search_rff_classifier<T: Scalar>(
    feature_map: &RffFeatureMap<T>,
    data: &ClassificationData<T>,
    length_scale: T,
    output_scales: &[T],
    learning_rates: &[T],
    epochs: usize,
    split_seed: u64,
) -> Result<GridSearchFit<T>> {
    ensure(data.len() >= 5, || format!("need at least 5 rows for a 1/5 holdout, got {}", data.len()))?;
    let (train, valid) = stratified_split(&data.labels, data.class_count, 5, split_seed)?;
    let problem = OutputScaleGrid {
        feature_map,
        data,
        length_scale,
    };
    let grid: Vec<Vec<T>> = output_scales.iter().map(|&s| vec![s]).collect();
    fit_map_grid_search(&problem, &grid, learning_rates, epochs, OptimizerKind::Adam, &train, &valid)
}
