//! Penalized maximum-likelihood (MAP) point estimation and the holdout grid
//! search used as the tuning baseline.

use std::cmp::Ordering;

use ndarray::{s, Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::scalar::Scalar;
use crate::variational::model::LikelihoodModel;
use crate::variational::prior::PriorCovariance;

/// `½·precision·(θ_b − mean)ᵀ Σ⁻¹ (θ_b − mean)` on one contiguous block.
/// A precision of zero switches the block's penalty off.
#[derive(Debug, Clone)]
pub struct PenaltyBlock<T> {
    pub mean: Array1<T>,
    pub covariance: PriorCovariance<T>,
    pub precision: T,
}

impl<T: Scalar> PenaltyBlock<T> {
    /// `½·precision·‖θ_b − mean‖²`.
    pub fn isotropic(mean: Array1<T>, precision: T) -> Self {
        let n = mean.len();
        Self {
            mean,
            covariance: PriorCovariance::Identity(n),
            precision,
        }
    }
}

/// Sum of block penalties laid out in order over θ.
#[derive(Debug, Clone)]
pub struct GaussianPenalty<T> {
    pub blocks: Vec<PenaltyBlock<T>>,
}

impl<T: Scalar> GaussianPenalty<T> {
    pub fn new(blocks: Vec<PenaltyBlock<T>>) -> Result<Self> {
        for b in &blocks {
            ensure(b.precision >= T::zero() && b.precision.is_finite(), || {
                format!("penalty precision must be non-negative, got {}", b.precision)
            })?;
            ensure(b.mean.len() == b.covariance.dim(), || "penalty mean/covariance size mismatch".into())?;
        }
        Ok(Self { blocks })
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.mean.len()).sum()
    }

    pub fn value_and_grad(&self, theta: ArrayView1<T>) -> Result<(T, Array1<T>)> {
        ensure(theta.len() == self.dim(), || {
            format!("penalty covers {} parameters, θ has {}", self.dim(), theta.len())
        })?;
        let mut value = T::zero();
        let mut grad = Array1::zeros(theta.len());
        let mut start = 0;
        for b in &self.blocks {
            let len = b.mean.len();
            if b.precision > T::zero() {
                let delta = &theta.slice(s![start..start + len]) - &b.mean;
                let solved = b.covariance.apply_inverse(delta.view())?;
                value += T::lit(0.5) * b.precision * delta.dot(&solved);
                grad.slice_mut(s![start..start + len])
                    .assign(&solved.mapv(|v| v * b.precision));
            }
            start += len;
        }
        Ok((value, grad))
    }
}

/// `log p(y | θ) − penalty(θ)` and its gradient in θ.
pub fn map_objective_and_grad<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    penalty: &GaussianPenalty<T>,
    theta: ArrayView1<T>,
    hyper: &[T],
) -> Result<(T, Array1<T>)> {
    let g = model.log_likelihood_grad(theta, hyper)?;
    let (p, pg) = penalty.value_and_grad(theta)?;
    Ok((g.value - p, g.theta - &pg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit<T> {
    pub theta: Array1<T>,
    pub learning_rate: T,
    /// Objective before each step.
    pub trace: Vec<T>,
    pub objective: Option<T>,
    pub failure: Option<String>,
}

impl<T> MapFit<T> {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.objective.is_some()
    }
}

/// Ascends the penalized log-likelihood for a fixed number of steps. The
/// model's hyperparameters stay fixed at `hyper`.
pub fn fit_map<T: Scalar, M: LikelihoodModel<T> + ?Sized>(
    model: &M,
    penalty: &GaussianPenalty<T>,
    init: ArrayView1<T>,
    hyper: &[T],
    learning_rate: T,
    epochs: usize,
    optimizer: OptimizerKind,
) -> MapFit<T> {
    let mut theta = init.to_vec();
    let mut opt = Optimizer::new(optimizer, learning_rate, theta.len());
    let mut trace = Vec::with_capacity(epochs);
    let mut failure = None;
    for epoch in 0..epochs {
        match map_objective_and_grad(model, penalty, ArrayView1::from(&theta), hyper) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                trace.push(v);
                opt.ascend(&mut theta, g.as_slice().expect("contiguous gradient"));
            }
            Ok(_) => {
                failure = Some(format!("epoch {epoch}: non-finite objective or gradient"));
                break;
            }
            Err(e) => {
                failure = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        }
    }
    let theta = Array1::from(theta);
    let objective = match failure {
        Some(_) => None,
        None => match map_objective_and_grad(model, penalty, theta.view(), hyper) {
            Ok((v, _)) if v.is_finite() => Some(v),
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
    MapFit {
        theta,
        learning_rate,
        trace,
        objective,
        failure,
    }
}

/// A model family indexed by grid cells. `build` returns the likelihood on
/// the given rows, the penalty and the initial θ for one cell; validation
/// NLL is `−log p(y_valid | θ)/N_valid` under the same family.
pub trait GridProblem<T: Scalar>: Sync {
    type Model: LikelihoodModel<T>;

    fn build(&self, rows: &[usize], cell: &[T]) -> Result<(Self::Model, GaussianPenalty<T>, Array1<T>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCellResult<T> {
    pub cell: Vec<T>,
    pub learning_rate: T,
    pub validation_nll: Option<T>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchFit<T> {
    pub cells: Vec<GridCellResult<T>>,
    pub selected: usize,
    /// The winner retrained on training and validation rows together.
    pub refit: MapFit<T>,
}

impl<T: Scalar> GridSearchFit<T> {
    pub fn winner(&self) -> &GridCellResult<T> {
        &self.cells[self.selected]
    }
}

fn lexicographic<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// MAP fit on `train` for every (cell, learning rate), selection by
/// validation NLL on `valid`, then a refit on both sets at the winner. Ties
/// are broken by the smallest (cell, learning rate) so the outcome does not
/// depend on grid order.
pub fn fit_map_grid_search<T: Scalar, P: GridProblem<T>>(
    problem: &P,
    grid: &[Vec<T>],
    learning_rates: &[T],
    epochs: usize,
    optimizer: OptimizerKind,
    train: &[usize],
    valid: &[usize],
) -> Result<GridSearchFit<T>> {
    ensure(!grid.is_empty(), || "grid must have at least one cell".into())?;
    ensure(!learning_rates.is_empty(), || "at least one learning rate is required".into())?;
    ensure(epochs >= 1, || "epochs must be at least 1".into())?;
    ensure(!train.is_empty() && !valid.is_empty(), || "training and validation sets must be non-empty".into())?;

    let jobs: Vec<(usize, T)> = grid
        .iter()
        .enumerate()
        .flat_map(|(i, _)| learning_rates.iter().map(move |&lr| (i, lr)))
        .collect();
    let cells: Vec<GridCellResult<T>> = jobs
        .par_iter()
        .map(|&(i, lr)| {
            let cell = &grid[i];
            let run = || -> Result<T> {
                let (model, penalty, init) = problem.build(train, cell)?;
                let fit = fit_map(&model, &penalty, init.view(), &[], lr, epochs, optimizer);
                if let Some(f) = fit.failure {
                    return Err(Error::Numerical(f));
                }
                let (vmodel, _, _) = problem.build(valid, cell)?;
                let nll = -vmodel.log_likelihood(fit.theta.view(), &[])? / T::from_usize_lossy(valid.len());
                ensure(nll.is_finite(), || "non-finite validation NLL".into())?;
                Ok(nll)
            };
            let (validation_nll, failure) = match run() {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            GridCellResult {
                cell: cell.clone(),
                learning_rate: lr,
                validation_nll,
                failure,
            }
        })
        .collect();

    let mut selected: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let Some(v) = c.validation_nll else { continue };
        let better = match selected {
            None => true,
            Some(j) => {
                let b = &cells[j];
                let bv = b.validation_nll.expect("selected cells have a score");
                v < bv
                    || (v == bv
                        && lexicographic(&c.cell, &b.cell)
                            .then(c.learning_rate.partial_cmp(&b.learning_rate).unwrap_or(Ordering::Equal))
                            == Ordering::Less)
            }
        };
        if better {
            selected = Some(i);
        }
    }
    let Some(selected) = selected else {
        return Err(Error::AllCandidatesFailed(
            cells
                .iter()
                .map(|c| {
                    format!(
                        "cell {:?} lr={}: {}",
                        c.cell.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
                        c.learning_rate,
                        c.failure.as_deref().unwrap_or("failed")
                    )
                })
                .collect(),
        ));
    };

    let mut all: Vec<usize> = train.iter().chain(valid).copied().collect();
    all.sort_unstable();
    let win = &cells[selected];
    let (model, penalty, init) = problem.build(&all, &win.cell)?;
    let refit = fit_map(&model, &penalty, init.view(), &[], win.learning_rate, epochs, optimizer);
    if let Some(f) = &refit.failure {
        return Err(Error::Numerical(format!("refit on merged data failed: {f}")));
    }
    Ok(GridSearchFit {
        cells,
        selected,
        refit,
    })
}
