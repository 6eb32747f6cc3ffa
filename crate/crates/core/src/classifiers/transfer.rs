//! Transfer learning with a pretrained backbone: a dense encoder `f_w`
//! followed by a linear softmax head `V`, with L2-zero, L2-SP or low-rank
//! (PTYL-style) priors on `w` and an isotropic prior on `vec(V)`.
//!
//! θ packs the backbone weights first and the head `V` (C × (H+1),
//! row-major) after them.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifiers::categorical::{categorical_loglik_from_logits, check_labels};
use crate::classifiers::mlp::MlpEncoder;
use crate::classifiers::predict::ClassifierModel;
use crate::data::{stratified_split, ClassificationData};
use crate::error::{ensure, input_err, Error, Result};
use crate::kernel::shape_error;
use crate::map::{fit_map, fit_map_grid_search, GaussianPenalty, GridProblem, GridSearchFit, PenaltyBlock};
use crate::optim::OptimizerKind;
use crate::rng::{derive_seed, rng_from_seed, stream_seed, Stream};
use crate::scalar::Scalar;
use crate::variational::model::{LikelihoodModel, LogLikGrad};
use crate::variational::prior::{GaussianPrior, PriorCovariance, ScaleHyper};
use crate::variational::trainer::{fit, PriorBlock, TemperedObjectiveConfig, VariationalFit, VariationalState};

/// Encoder architecture plus the number of classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTransferModel {
    pub encoder: MlpEncoder,
    pub class_count: usize,
}

impl ToyTransferModel {
    pub fn new(layer_sizes: Vec<usize>, class_count: usize) -> Result<Self> {
        ensure(class_count >= 2, || format!("need at least 2 classes, got {class_count}"))?;
        Ok(Self {
            encoder: MlpEncoder::new(layer_sizes)?,
            class_count,
        })
    }

    /// F.
    pub fn backbone_dim(&self) -> usize {
        self.encoder.param_count()
    }

    /// C·(H+1), counting the always-one feature.
    pub fn head_dim(&self) -> usize {
        self.class_count * self.encoder.output_dim()
    }

    /// D = F + C·(H+1).
    pub fn param_dim(&self) -> usize {
        self.backbone_dim() + self.head_dim()
    }

    fn split<'a, T: Scalar>(&self, theta: ArrayView1<'a, T>) -> Result<(ArrayView1<'a, T>, ArrayView2<'a, T>)> {
        if theta.len() != self.param_dim() {
            return Err(shape_error("transfer model parameters", self.param_dim(), theta.len()));
        }
        let f = self.backbone_dim();
        let w = theta.slice_move(s![..f]);
        let v = theta
            .slice_move(s![f..])
            .into_shape_with_order((self.class_count, self.encoder.output_dim()))
            .expect("length checked");
        Ok((w, v))
    }

    /// Encodings `z_i = [f_w(x_i), 1]`.
    pub fn encode<T: Scalar>(&self, theta: ArrayView1<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        let (w, _) = self.split(theta)?;
        Ok(self.encoder.forward(w, x)?.0)
    }

    /// `[w; 0]`: the backbone followed by a zero head.
    pub fn initial_theta<T: Scalar>(&self, backbone: ArrayView1<T>) -> Result<Array1<T>> {
        if backbone.len() != self.backbone_dim() {
            return Err(shape_error("backbone", self.backbone_dim(), backbone.len()));
        }
        let mut theta = Array1::zeros(self.param_dim());
        theta.slice_mut(s![..self.backbone_dim()]).assign(&backbone);
        Ok(theta)
    }
}

impl<T: Scalar> ClassifierModel<T> for ToyTransferModel {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn logits(&self, theta: ArrayView1<T>, _hyper: &[T], x: ArrayView2<T>) -> Result<Array2<T>> {
        let (w, v) = self.split(theta)?;
        let (z, _) = self.encoder.forward(w, x)?;
        Ok(z.dot(&v.t()))
    }
}

/// Categorical likelihood of the transfer model on a fixed dataset.
#[derive(Debug, Clone)]
pub struct TransferLikelihood<T> {
    model: ToyTransferModel,
    inputs: Array2<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> TransferLikelihood<T> {
    pub fn new(model: ToyTransferModel, data: &ClassificationData<T>) -> Result<Self> {
        ensure(data.class_count == model.class_count, || {
            format!("data has {} classes but the model {}", data.class_count, model.class_count)
        })?;
        if data.input_dim() != model.encoder.input_dim() {
            return Err(shape_error("input columns", model.encoder.input_dim(), data.input_dim()));
        }
        check_labels(&data.labels, model.class_count)?;
        Ok(Self {
            model,
            inputs: data.inputs.clone(),
            labels: data.labels.clone(),
        })
    }

    pub fn model(&self) -> &ToyTransferModel {
        &self.model
    }
}

impl<T: Scalar> LikelihoodModel<T> for TransferLikelihood<T> {
    fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn data_len(&self) -> usize {
        self.labels.len()
    }

    fn log_likelihood(&self, theta: ArrayView1<T>, hyper: &[T]) -> Result<T> {
        let logits = self.model.logits(theta, hyper, self.inputs.view())?;
        Ok(categorical_loglik_from_logits(logits.view(), &self.labels)?.0)
    }

    fn log_likelihood_grad(&self, theta: ArrayView1<T>, _hyper: &[T]) -> Result<LogLikGrad<T>> {
        let (w, v) = self.model.split(theta)?;
        let (z, cache) = self.model.encoder.forward(w, self.inputs.view())?;
        let logits = z.dot(&v.t());
        let (value, g) = categorical_loglik_from_logits(logits.view(), &self.labels)?;
        let g_head = g.t().dot(&z);
        let g_z = g.dot(&v);
        let g_w = self.model.encoder.backward(w, &cache, g_z.view());
        let mut grad = Array1::zeros(theta.len());
        let f = self.model.backbone_dim();
        grad.slice_mut(s![..f]).assign(&g_w);
        grad.slice_mut(s![f..]).assign(&Array1::from_iter(g_head.iter().copied()));
        Ok(LogLikGrad {
            value,
            theta: grad,
            hyper: Vec::new(),
        })
    }
}

/// Backbone prior family: mean and base covariance of `p(w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PriorVariant<T> {
    /// `N(0, λI)`.
    L2Zero,
    /// `N(μ, λI)`.
    L2Sp,
    /// `N(μ, λ·½(diag(Σ_diag) + QQᵀ/(K−1)))`; `factors` holds the F rows of Q.
    Ptyl { sigma_diag: Vec<T>, factors: Vec<Vec<T>> },
}

impl<T: Scalar> PriorVariant<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::L2Zero => "l2_zero",
            Self::L2Sp => "l2_sp",
            Self::Ptyl { .. } => "ptyl",
        }
    }

    /// Backbone prior mean and base covariance given the pretrained `μ`.
    pub fn backbone_prior(&self, pretrained: ArrayView1<T>) -> Result<(Array1<T>, PriorCovariance<T>)> {
        let f = pretrained.len();
        match self {
            Self::L2Zero => Ok((Array1::zeros(f), PriorCovariance::Identity(f))),
            Self::L2Sp => Ok((pretrained.to_owned(), PriorCovariance::Identity(f))),
            Self::Ptyl { sigma_diag, factors } => {
                ensure(sigma_diag.len() == f && factors.len() == f, || {
                    format!("low-rank prior must have {f} rows, got diag {} and Q {}", sigma_diag.len(), factors.len())
                })?;
                let k = factors.first().map_or(0, Vec::len);
                ensure(factors.iter().all(|r| r.len() == k), || "Q rows must have equal length".into())?;
                let q = Array2::from_shape_fn((f, k), |(i, j)| factors[i][j]);
                Ok((
                    pretrained.to_owned(),
                    PriorCovariance::diag_plus_lowrank(Array1::from(sigma_diag.clone()), q)?,
                ))
            }
        }
    }
}

/// Prior family and the initial λ, τ (both are replaced by their optima
/// after the first step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<T> {
    #[serde(flatten)]
    pub variant: PriorVariant<T>,
    pub initial_lambda: T,
    pub initial_tau: T,
}

impl<T: Scalar> PriorSpec<T> {
    pub fn new(variant: PriorVariant<T>, initial_lambda: T, initial_tau: T) -> Self {
        Self {
            variant,
            initial_lambda,
            initial_tau,
        }
    }

    /// Backbone block (learned λ) followed by the head block (learned τ).
    pub fn blocks(&self, pretrained: ArrayView1<T>, head_dim: usize) -> Result<Vec<PriorBlock<T>>> {
        let (mean, cov) = self.variant.backbone_prior(pretrained)?;
        Ok(vec![
            PriorBlock::learned(GaussianPrior::new(mean, cov, self.initial_lambda)?, ScaleHyper::Lambda),
            PriorBlock::learned(
                GaussianPrior::scaled_identity(Array1::zeros(head_dim), self.initial_tau)?,
                ScaleHyper::Tau,
            ),
        ])
    }
}

/// Tempered-ELBo fit of `q(w)q(V)` with a shared isotropic variance,
/// starting at `w = μ`, `V = 0`, with closed-form λ and τ updates.
pub fn fit_de_elbo_classifier<T: Scalar>(
    model: &ToyTransferModel,
    data: &ClassificationData<T>,
    pretrained: ArrayView1<T>,
    prior: &PriorSpec<T>,
    config: &TemperedObjectiveConfig<T>,
    learning_rates: &[T],
    epochs: usize,
) -> Result<VariationalFit<T>> {
    let likelihood = TransferLikelihood::new(model.clone(), data)?;
    let blocks = prior.blocks(pretrained, model.head_dim())?;
    let init = VariationalState::new(model.initial_theta(pretrained)?, config.init_sigma_q, Vec::new(), &blocks);
    fit(&likelihood, &blocks, &init, config, learning_rates, epochs)
}

/// Grid cells are `[α/N, β/N]`: penalty strengths on the backbone and head
/// divided by the number of rows being fitted.
struct TransferGrid<'a, T> {
    model: &'a ToyTransferModel,
    data: &'a ClassificationData<T>,
    backbone_mean: Array1<T>,
    backbone_cov: PriorCovariance<T>,
    init: Array1<T>,
}

impl<T: Scalar> GridProblem<T> for TransferGrid<'_, T> {
    type Model = TransferLikelihood<T>;

    fn build(&self, rows: &[usize], cell: &[T]) -> Result<(TransferLikelihood<T>, GaussianPenalty<T>, Array1<T>)> {
        ensure(cell.len() == 2, || format!("grid cells need [alpha/N, beta/N], got {} values", cell.len()))?;
        let n = T::from_usize_lossy(rows.len());
        let penalty = GaussianPenalty::new(vec![
            PenaltyBlock {
                mean: self.backbone_mean.clone(),
                covariance: self.backbone_cov.clone(),
                precision: cell[0] * n,
            },
            PenaltyBlock::isotropic(Array1::zeros(self.model.head_dim()), cell[1] * n),
        ])?;
        let likelihood = TransferLikelihood::new(self.model.clone(), &self.data.select(rows))?;
        Ok((likelihood, penalty, self.init.clone()))
    }
}

/// MAP + grid search: stratified 1/5 holdout, one MAP fit per
/// (cell, learning rate), selection by validation NLL, refit on all rows.
#[allow(clippy::too_many_arguments)]
pub fn fit_map_grid_search_classifier<T: Scalar>(
    model: &ToyTransferModel,
    data: &ClassificationData<T>,
    pretrained: ArrayView1<T>,
    variant: &PriorVariant<T>,
    grid: &[Vec<T>],
    learning_rates: &[T],
    epochs: usize,
    split_seed: u64,
) -> Result<GridSearchFit<T>> {
    ensure(data.len() >= 5, || format!("need at least 5 rows for a 1/5 holdout, got {}", data.len()))?;
    let (train, valid) = stratified_split(&data.labels, data.class_count, 5, split_seed)?;
    let (backbone_mean, backbone_cov) = variant.backbone_prior(pretrained)?;
    let problem = TransferGrid {
        model,
        data,
        backbone_mean,
        backbone_cov,
        init: model.initial_theta(pretrained)?,
    };
    fit_map_grid_search(&problem, grid, learning_rates, epochs, OptimizerKind::Adam, &train, &valid)
}

/// Pretrained backbone `μ` and a low-rank description of the spread of the
/// late training iterates, usable as a PTYL-style prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedBackbone<T> {
    pub mean: Array1<T>,
    /// Per-weight variance of the snapshots, floored at `variance_floor`.
    pub sigma_diag: Vec<T>,
    /// F rows of K snapshot deviations from the snapshot average.
    pub factors: Vec<Vec<T>>,
}

impl<T: Scalar> PretrainedBackbone<T> {
    pub fn ptyl_variant(&self) -> PriorVariant<T> {
        PriorVariant::Ptyl {
            sigma_diag: self.sigma_diag.clone(),
            factors: self.factors.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Penalty `α/N` on all weights.
    pub weight_decay: f64,
    /// Number of late iterates kept for the low-rank spread (K ≥ 2).
    pub snapshot_count: usize,
    pub snapshot_every: usize,
    pub variance_floor: f64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 3000,
            learning_rate: 0.01,
            weight_decay: 1e-4,
            snapshot_count: 5,
            snapshot_every: 50,
            variance_floor: 1e-4,
        }
    }
}

/// MAP training of encoder and head on a source task from a random
/// initialization; returns the backbone part.
pub fn pretrain_backbone<T: Scalar>(
    model: &ToyTransferModel,
    source: &ClassificationData<T>,
    options: &PretrainOptions,
    seed: u64,
) -> Result<PretrainedBackbone<T>> {
    ensure(options.snapshot_count >= 2, || "snapshot_count must be at least 2".into())?;
    ensure(options.snapshot_every >= 1, || "snapshot_every must be at least 1".into())?;
    let tail = options.snapshot_count * options.snapshot_every;
    ensure(options.epochs > tail, || {
        format!("epochs must exceed snapshot_count × snapshot_every = {tail}")
    })?;
    let likelihood = TransferLikelihood::new(model.clone(), source)?;
    let n = T::from_usize_lossy(source.len());
    let penalty = GaussianPenalty::new(vec![PenaltyBlock::isotropic(
        Array1::zeros(model.param_dim()),
        T::lit(options.weight_decay) * n,
    )])?;
    let backbone = model.encoder.init::<T>(stream_seed(seed, Stream::Init));
    let mut rng = rng_from_seed(derive_seed(seed, "pretrain-head"));
    let mut theta = model.initial_theta(backbone.view())?;
    for v in theta.slice_mut(s![model.backbone_dim()..]).iter_mut() {
        *v = T::lit(0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let lr = T::lit(options.learning_rate);
    let warm = fit_map(&likelihood, &penalty, theta.view(), &[], lr, options.epochs - tail, OptimizerKind::Adam);
    if let Some(f) = warm.failure {
        return Err(Error::Numerical(format!("pretraining failed: {f}")));
    }
    // late iterates, restarting the optimizer per chunk keeps each chunk short
    let f = model.backbone_dim();
    let mut current = warm.theta;
    let mut snapshots = Vec::with_capacity(options.snapshot_count);
    for _ in 0..options.snapshot_count {
        let chunk = fit_map(&likelihood, &penalty, current.view(), &[], lr, options.snapshot_every, OptimizerKind::Adam);
        if let Some(f) = chunk.failure {
            return Err(Error::Numerical(format!("pretraining failed: {f}")));
        }
        current = chunk.theta;
        snapshots.push(current.slice(s![..f]).to_owned());
    }
    let k = T::from_usize_lossy(snapshots.len());
    let avg = snapshots.iter().fold(Array1::zeros(f), |acc, s| acc + s) / k;
    let floor = T::lit(options.variance_floor);
    let sigma_diag = (0..f)
        .map(|i| {
            let var = snapshots.iter().map(|s| (s[i] - avg[i]) * (s[i] - avg[i])).sum::<T>() / (k - T::one());
            var.max(floor)
        })
        .collect();
    let factors = (0..f).map(|i| snapshots.iter().map(|s| s[i] - avg[i]).collect()).collect();
    Ok(PretrainedBackbone {
        mean: current.slice(s![..f]).to_owned(),
        sigma_diag,
        factors,
    })
}

/// Synthetic source/target tasks sharing a teacher encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferTaskConfig {
    pub layer_sizes: Vec<usize>,
    pub class_count: usize,
    pub source_count: usize,
    pub target_count: usize,
    pub test_count: usize,
    /// Inputs are `N(0, input_scale² I)`.
    pub input_scale: f64,
    /// Multiplies the teacher's initial weights.
    pub teacher_gain: f64,
    /// Scale of the random teacher heads.
    pub head_scale: f64,
}

impl Default for TransferTaskConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![2, 64, 32],
            class_count: 2,
            source_count: 400,
            target_count: 40,
            test_count: 1000,
            input_scale: 1.5,
            teacher_gain: 1.5,
            head_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTask<T> {
    pub model: ToyTransferModel,
    pub source: ClassificationData<T>,
    pub target: ClassificationData<T>,
    pub test: ClassificationData<T>,
    /// The teacher encoder weights that generated both tasks.
    pub teacher_backbone: Array1<T>,
}

fn teacher_head<T: Scalar, R: Rng>(
    model: &ToyTransferModel,
    backbone: ArrayView1<T>,
    scale: f64,
    pool: ArrayView2<T>,
    rng: &mut R,
) -> Result<Array1<T>> {
    let h = model.encoder.output_dim();
    let mut theta = model.initial_theta(backbone)?;
    let f = model.backbone_dim();
    for v in theta.slice_mut(s![f..]).iter_mut() {
        *v = T::lit(scale * rng.sample::<f64, _>(StandardNormal));
    }
    // shift each class's bias so the logits are centred over the pool
    let logits = ClassifierModel::<T>::logits(model, theta.view(), &[], pool)?;
    let centre = logits.mean_axis(Axis(0)).expect("non-empty pool");
    for c in 0..model.class_count {
        theta[f + c * h + h - 1] -= centre[c];
    }
    Ok(theta)
}

fn draw_balanced<T: Scalar, R: Rng>(
    model: &ToyTransferModel,
    theta: ArrayView1<T>,
    count: usize,
    input_scale: f64,
    rng: &mut R,
) -> Result<ClassificationData<T>> {
    let c = model.class_count;
    let quota: Vec<usize> = (0..c).map(|k| count / c + usize::from(k < count % c)).collect();
    let mut taken = vec![0; c];
    let mut rows: Vec<(Vec<T>, usize)> = Vec::with_capacity(count);
    let dim = model.encoder.input_dim();
    let mut attempts = 0;
    while rows.len() < count {
        attempts += 1;
        if attempts > 10_000 + 200 * count {
            return input_err("teacher produced too few examples of some class; change the task seed or scales");
        }
        let x: Vec<T> = (0..dim)
            .map(|_| T::lit(input_scale * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let xm = Array2::from_shape_vec((1, dim), x.clone()).expect("one row");
        let logits = ClassifierModel::<T>::logits(model, theta, &[], xm.view())?;
        let row = logits.row(0);
        let mut label = 0;
        for k in 1..c {
            if row[k] > row[label] {
                label = k;
            }
        }
        if taken[label] < quota[label] {
            taken[label] += 1;
            rows.push((x, label));
        }
    }
    let inputs = Array2::from_shape_fn((count, dim), |(i, j)| rows[i].0[j]);
    ClassificationData::new(inputs, rows.into_iter().map(|r| r.1).collect(), c)
}

/// A teacher encoder with two random heads: the source task uses one head,
/// the target and test sets the other. Every set is class-balanced.
pub fn generate_transfer_task<T: Scalar>(config: &TransferTaskConfig, seed: u64) -> Result<TransferTask<T>> {
    ensure(config.source_count >= config.class_count && config.target_count >= config.class_count, || {
        "each set needs at least one example per class".into()
    })?;
    ensure(config.input_scale > 0.0 && config.teacher_gain > 0.0 && config.head_scale > 0.0, || {
        "task scales must be positive".into()
    })?;
    let model = ToyTransferModel::new(config.layer_sizes.clone(), config.class_count)?;
    let mut rng = rng_from_seed(stream_seed(seed, Stream::Data));
    let gain = T::lit(config.teacher_gain);
    let teacher = model
        .encoder
        .init::<T>(derive_seed(seed, "teacher-backbone"))
        .mapv(|v| v * gain);
    let dim = model.encoder.input_dim();
    let pool = Array2::from_shape_fn((2000, dim), |_| T::lit(config.input_scale * rng.sample::<f64, _>(StandardNormal)));
    let source_theta = teacher_head(&model, teacher.view(), config.head_scale, pool.view(), &mut rng)?;
    let target_theta = teacher_head(&model, teacher.view(), config.head_scale, pool.view(), &mut rng)?;
    let source = draw_balanced(&model, source_theta.view(), config.source_count, config.input_scale, &mut rng)?;
    let target = draw_balanced(&model, target_theta.view(), config.target_count, config.input_scale, &mut rng)?;
    let test = draw_balanced(&model, target_theta.view(), config.test_count.max(config.class_count), config.input_scale, &mut rng)?;
    Ok(TransferTask {
        model,
        source,
        target,
        test,
        teacher_backbone: teacher,
    })
}
