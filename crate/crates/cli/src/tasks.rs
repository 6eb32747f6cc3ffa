//! One function per subcommand. Each returns every artifact of the run as
//! in-memory text so the same code path serves writing and `--check`.

use anyhow::{bail, Context, Result};
use deelbo::classifiers::{
    fit_de_elbo_classifier, fit_map_grid_search_classifier, fit_map_grid_search_rff_classifier, fit_rff_classifier,
    generate_transfer_task, predict_mc, predict_point, pretrain_backbone, ClassifierModel, PriorSpec, PriorVariant,
    RffClassifierLikelihood,
};
use deelbo::data::{
    accuracy, evenly_spaced_grid, generate_toy_classification, generate_toy_regression, mean_nll, rmse,
    ClassificationData, RegressionData,
};
use deelbo::gp::{gp_fit_hyperparams, gp_predict, GpFit, GpFitOptions, GpModel};
use deelbo::kernel::{KernelParams, RffFeatureMap};
use deelbo::optim::OptimizerKind;
use deelbo::rff::{fit_map_grid_search_regression, fit_rff_regression, optimal_isotropic_variance, predictive_posterior};
use deelbo::rng::{derive_seed, stream_seed, Stream};
use deelbo::scalar::softplus;
use deelbo::variational::{ExpectationMode, KappaPolicy, TemperedObjectiveConfig, VariationalFit};
use ndarray::{Array1, Array2, ArrayView1};

use crate::config::{ClassifierKind, ClassifierMethod, ExperimentConfig, PriorName, Task};
use crate::io::{
    classification_csv, predictive_grid_csv, probability_grid_csv, read_classification, read_regression,
    regression_csv, table_csv, trace_csv,
};
use crate::report::FitResult;
use crate::run::sha256_hex;

pub const CONFIG_FILE: &str = "config.json";
pub const RESULT_FILE: &str = "fit_result.json";
pub const DATASET_FILE: &str = "dataset.csv";

/// Artifacts of one run, in write order. `result` is also present in
/// `files` under [`RESULT_FILE`], last.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<(String, String)>,
    pub result: FitResult,
}

impl RunOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

struct Builder {
    files: Vec<(String, String)>,
}

impl Builder {
    fn new(config: &ExperimentConfig) -> Self {
        let mut echo = serde_json::to_string_pretty(config).expect("config serializes");
        echo.push('\n');
        Self {
            files: vec![(CONFIG_FILE.to_string(), echo)],
        }
    }

    fn add(&mut self, name: String, content: String) -> String {
        self.files.push((name.clone(), content));
        name
    }

    fn finish(mut self, mut result: FitResult) -> RunOutput {
        result.artifacts = self
            .files
            .iter()
            .map(|(n, c)| (n.clone(), sha256_hex(c.as_bytes())))
            .collect();
        self.files.push((RESULT_FILE.to_string(), result.to_json()));
        RunOutput {
            files: self.files,
            result,
        }
    }
}

/// Validates the configuration for `task` and runs it.
pub fn run(task: Task, config: &ExperimentConfig) -> Result<RunOutput> {
    let mut config = config.clone();
    config.task = Some(task);
    config.validate(task)?;
    match task {
        Task::GenRegression => gen_regression(&config),
        Task::GenClassification => gen_classification(&config),
        Task::FitRff => fit_rff(&config),
        Task::FitGp => fit_gp(&config),
        Task::FitClassifier => fit_classifier(&config),
        Task::CompareFig2 => compare_fig2(&config),
        Task::LemmaSweep => lemma_sweep(&config),
        Task::KappaSweep => kappa_sweep(&config),
    }
}

fn regression_data(cfg: &ExperimentConfig) -> Result<RegressionData<f64>> {
    match &cfg.data {
        Some(path) => {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
            Ok(read_regression(path)?)
        }
        None => Ok(generate_toy_regression(
            cfg.n,
            cfg.noise_var,
            (cfg.x_range[0], cfg.x_range[1]),
            cfg.seed,
        )?),
    }
}

fn classification_data(cfg: &ExperimentConfig) -> Result<(ClassificationData<f64>, Option<ClassificationData<f64>>)> {
    let c = &cfg.classifier;
    let train = match &cfg.data {
        Some(path) => {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
            read_classification(path, Some(c.class_count))?
        }
        None => generate_toy_classification(cfg.n, c.class_count, c.blobs, cfg.seed)?,
    };
    let test = match (&cfg.test_data, &cfg.data) {
        (Some(path), _) => {
            if !path.exists() {
                bail!("test dataset file {} does not exist", path.display());
            }
            Some(read_classification(path, Some(c.class_count))?)
        }
        (None, None) if c.test_count >= 2 * c.class_count => Some(generate_toy_classification(
            c.test_count,
            c.class_count,
            c.blobs,
            derive_seed(cfg.seed, "test"),
        )?),
        _ => None,
    };
    Ok((train, test))
}

fn objective_config(cfg: &ExperimentConfig, kappa: KappaPolicy<f64>, expectation: ExpectationMode) -> TemperedObjectiveConfig<f64> {
    TemperedObjectiveConfig {
        kappa,
        sample_count_train: cfg.sample_count_train,
        sample_count_eval: cfg.sample_count_eval,
        seed: cfg.seed,
        expectation,
        optimizer: OptimizerKind::Adam,
        init_sigma_q: cfg.init_sigma_q,
    }
}

fn feature_map(cfg: &ExperimentConfig, input_dim: usize) -> Result<RffFeatureMap<f64>> {
    Ok(RffFeatureMap::sample(input_dim, cfg.features, stream_seed(cfg.seed, Stream::FeatureMap))?)
}

fn init_kernel(cfg: &ExperimentConfig) -> Result<KernelParams<f64>> {
    Ok(KernelParams::new(cfg.length_scale, cfg.output_scale)?)
}

fn learned_kernel(cfg: &ExperimentConfig, hyper: &[f64]) -> Result<KernelParams<f64>> {
    if cfg.learn_kernel && hyper.len() == 2 {
        Ok(KernelParams::new(softplus(hyper[0]), softplus(hyper[1]))?)
    } else {
        init_kernel(cfg)
    }
}

fn prediction_grid(cfg: &ExperimentConfig) -> Array2<f64> {
    evenly_spaced_grid(cfg.grid_range[0], cfg.grid_range[1], cfg.grid_points)
}

fn l2_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn trace_files(b: &mut Builder, prefix: &str, fit: &VariationalFit<f64>) -> Vec<String> {
    fit.candidates
        .iter()
        .enumerate()
        .map(|(i, c)| b.add(format!("{prefix}trace_lr{i}.csv"), trace_csv(&c.trace)))
        .collect()
}

fn scalar_trace_files(b: &mut Builder, prefix: &str, column: &str, traces: &[&[f64]]) -> Vec<String> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let rows: Vec<Vec<f64>> = t.iter().enumerate().map(|(e, v)| vec![e as f64, *v]).collect();
            b.add(format!("{prefix}trace_lr{i}.csv"), table_csv(&["epoch", column], &rows))
        })
        .collect()
}

/// A fitted 1-D regressor column: summary, predictive on the grid.
struct Column {
    result: FitResult,
    grid_mean: Array1<f64>,
}

fn variational_column(
    b: &mut Builder,
    cfg: &ExperimentConfig,
    data: &RegressionData<f64>,
    map: &RffFeatureMap<f64>,
    objective: &TemperedObjectiveConfig<f64>,
    prefix: &str,
    method: &str,
) -> Result<Column> {
    let fit = fit_rff_regression(
        map,
        data,
        init_kernel(cfg)?,
        cfg.noise_std,
        cfg.learn_kernel,
        objective,
        &cfg.learning_rates,
        cfg.epochs,
    )
    .with_context(|| format!("{method} fit"))?;
    let winner = fit.winner();
    let kernel = learned_kernel(cfg, &winner.state.hyper)?;
    let q = fit.posterior()?;
    let mut result = FitResult::new(cfg.task.map_or("", Task::name), method).with_variational(&fit);
    result.kernel = Some(kernel);
    result.trace_files = trace_files(b, prefix, &fit);
    let train_phi = map.featurize(&kernel, data.inputs.view())?;
    let (train_mean, _) = predictive_posterior(&q, &train_phi, cfg.noise_std)?;
    result.metric("train_rmse", rmse(train_mean.view(), data.targets.view()));
    let mut grid_mean = Array1::zeros(0);
    if data.input_dim() == 1 {
        let grid = prediction_grid(cfg);
        let phi = map.featurize(&kernel, grid.view())?;
        let (mean, var) = predictive_posterior(&q, &phi, cfg.noise_std)?;
        let std = var.mapv(f64::sqrt);
        result.grid_files.push(b.add(
            format!("{prefix}predictive_grid.csv"),
            predictive_grid_csv(grid.view(), mean.view(), std.view()),
        ));
        grid_mean = mean;
    }
    Ok(Column { result, grid_mean })
}

fn gp_column(b: &mut Builder, cfg: &ExperimentConfig, data: &RegressionData<f64>, prefix: &str) -> Result<Column> {
    let options = GpFitOptions {
        steps: cfg.gp_steps,
        optimizer: OptimizerKind::Adam,
    };
    let fit = gp_fit_hyperparams(
        data.inputs.view(),
        data.targets.view(),
        &init_kernel(cfg)?,
        cfg.noise_std,
        &cfg.learning_rates,
        &options,
    )
    .context("GP hyperparameter fit")?;
    let mut result = FitResult::new(cfg.task.map_or("", Task::name), "gp_marginal_likelihood").with_gp(&fit);
    let traces: Vec<&[f64]> = fit.candidates.iter().map(|c| c.trace.as_slice()).collect();
    let trace_prefix = if prefix.is_empty() { "gp_" } else { prefix };
    result.trace_files = scalar_trace_files(b, trace_prefix, "log_marginal", &traces);
    let gp = GpFit::new(GpModel::new(fit.kernel, cfg.noise_std)?, data.inputs.view(), data.targets.view())?;
    let (train_mean, _) = gp_predict(&gp, data.inputs.view())?;
    result.metric("train_rmse", rmse(train_mean.view(), data.targets.view()));
    let mut grid_mean = Array1::zeros(0);
    if data.input_dim() == 1 {
        let grid = prediction_grid(cfg);
        let (mean, var) = gp_predict(&gp, grid.view())?;
        let std = var.mapv(f64::sqrt);
        result.grid_files.push(b.add(
            format!("{prefix}predictive_grid.csv"),
            predictive_grid_csv(grid.view(), mean.view(), std.view()),
        ));
        grid_mean = mean;
    }
    Ok(Column { result, grid_mean })
}

/// MAP point estimate of `v` at fixed `length_scale`, output scale chosen by
/// validation NLL. The predictive spread is the noise level alone.
fn map_column(
    b: &mut Builder,
    cfg: &ExperimentConfig,
    data: &RegressionData<f64>,
    map: &RffFeatureMap<f64>,
    length_scale: f64,
    prefix: &str,
) -> Result<Column> {
    let fit = fit_map_grid_search_regression(
        map,
        data,
        length_scale,
        cfg.noise_std,
        &cfg.map_output_scales,
        &cfg.learning_rates,
        cfg.map_epochs,
        stream_seed(cfg.seed, Stream::Split),
    )
    .with_context(|| format!("MAP grid search at length-scale {length_scale}"))?;
    let kernel = KernelParams::new(length_scale, fit.winner().cell[0])?;
    let mut result = FitResult::new(cfg.task.map_or("", Task::name), "map_grid_search").with_grid_search(&fit);
    result.kernel = Some(kernel);
    result.trace_files = scalar_trace_files(b, &format!("{prefix}map_refit_"), "objective", &[&fit.refit.trace])
        .into_iter()
        .collect();
    let theta = &fit.refit.theta;
    let train_mean = map.featurize(&kernel, data.inputs.view())?.values().dot(theta);
    result.metric("train_rmse", rmse(train_mean.view(), data.targets.view()));
    let mut grid_mean = Array1::zeros(0);
    if data.input_dim() == 1 {
        let grid = prediction_grid(cfg);
        let mean = map.featurize(&kernel, grid.view())?.values().dot(theta);
        let std = Array1::from_elem(mean.len(), cfg.noise_std);
        result.grid_files.push(b.add(
            format!("{prefix}predictive_grid.csv"),
            predictive_grid_csv(grid.view(), mean.view(), std.view()),
        ));
        grid_mean = mean;
    }
    Ok(Column { result, grid_mean })
}

fn gen_regression(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let data = regression_data(cfg)?;
    let mut result = FitResult::new(Task::GenRegression.name(), "generate");
    result.metric("n", data.len() as f64);
    result.grid_files.push(b.add(DATASET_FILE.into(), regression_csv(&data)));
    Ok(b.finish(result))
}

fn gen_classification(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let c = &cfg.classifier;
    let data = generate_toy_classification::<f64>(cfg.n, c.class_count, c.blobs, cfg.seed)?;
    let mut result = FitResult::new(Task::GenClassification.name(), "generate");
    result.metric("n", data.len() as f64);
    result.metric("majority_rate", data.majority_rate());
    result.grid_files.push(b.add(DATASET_FILE.into(), classification_csv(&data)));
    Ok(b.finish(result))
}

fn fit_rff(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let data = regression_data(cfg)?;
    let map = feature_map(cfg, data.input_dim())?;
    let objective = objective_config(cfg, cfg.kappa, cfg.expectation);
    let method = match cfg.kappa {
        KappaPolicy::Standard => "elbo",
        KappaPolicy::DataEmphasized => "de_elbo",
        KappaPolicy::Custom(_) => "tempered_elbo",
    };
    let col = variational_column(&mut b, cfg, &data, &map, &objective, "", method)?;
    Ok(b.finish(col.result))
}

fn fit_gp(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let data = regression_data(cfg)?;
    let col = gp_column(&mut b, cfg, &data, "")?;
    Ok(b.finish(col.result))
}

fn column_name(length_scale: f64) -> String {
    format!("map_gs_l{}", crate::io::fmt_f64(length_scale).trim_end_matches(".0"))
}

fn compare_fig2(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let data = regression_data(cfg)?;
    let map = feature_map(cfg, data.input_dim())?;
    let mut result = FitResult::new(Task::CompareFig2.name(), "comparison");
    let mut columns: Vec<(String, Column)> = Vec::new();
    for &l in &cfg.map_length_scales {
        let name = column_name(l);
        let col = map_column(&mut b, cfg, &data, &map, l, &format!("{name}_"))?;
        columns.push((name, col));
    }
    for (name, kappa) in [("elbo", KappaPolicy::Standard), ("de_elbo", KappaPolicy::DataEmphasized)] {
        let objective = objective_config(cfg, kappa, cfg.expectation);
        let col = variational_column(&mut b, cfg, &data, &map, &objective, &format!("{name}_"), name)?;
        columns.push((name.to_string(), col));
    }
    let gp = gp_column(&mut b, cfg, &data, "gp_")?;
    for (name, col) in &columns {
        if !gp.grid_mean.is_empty() {
            result.metric(&format!("l2_{name}_vs_gp"), l2_distance(col.grid_mean.view(), gp.grid_mean.view()));
        }
    }
    for (name, col) in columns {
        result.parts.insert(name, col.result);
    }
    result.parts.insert("gp".into(), gp.result);
    Ok(b.finish(result))
}

fn lemma_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let data = regression_data(cfg)?;
    let kernel = init_kernel(cfg)?;
    let n = data.len() as f64;
    let ratio = kernel.variance() / (cfg.noise_std * cfg.noise_std);
    let limit = 1.0 / (ratio + 1.0);
    let map_root = stream_seed(cfg.seed, Stream::FeatureMap);
    let mut rows = Vec::new();
    for &r in &cfg.lemma_features {
        let (mut elbo, mut de, mut tr) = (0.0, 0.0, 0.0);
        for s in 0..cfg.lemma_seeds {
            let map = RffFeatureMap::sample(data.input_dim(), r, derive_seed(map_root, &format!("lemma-{r}-{s}")))?;
            let phi = map.featurize(&kernel, data.inputs.view())?;
            elbo += optimal_isotropic_variance(&phi, cfg.noise_std, 1.0)?;
            de += optimal_isotropic_variance(&phi, cfg.noise_std, r as f64 / n)?;
            tr += phi.trace_gram() / (kernel.variance() * n);
        }
        let m = cfg.lemma_seeds as f64;
        let rf = r as f64;
        rows.push(vec![rf, elbo / m, de / m, rf / (ratio * n + rf), limit, tr / m]);
    }
    let mut result = FitResult::new(Task::LemmaSweep.name(), "closed_form");
    result.kernel = Some(kernel);
    let de: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let (lo, hi) = de.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mean = de.iter().sum::<f64>() / de.len() as f64;
    result.metric("kappa_r_over_n_relative_spread", (hi - lo) / mean);
    result.metric("limit_kappa_r_over_n", limit);
    result.metric(
        "kappa_r_over_n_limit_relative_error",
        (de[de.len() - 1] - limit).abs() / limit,
    );
    let increasing = rows.windows(2).all(|w| w[1][1] > w[0][1]);
    result.metric("kappa_1_increasing", if increasing { 1.0 } else { 0.0 });
    result.grid_files.push(b.add(
        "lemma_sweep.csv".into(),
        table_csv(
            &["R", "sigma_q_sq_kappa_1", "sigma_q_sq_kappa_r_over_n", "analytic_kappa_1", "limit_kappa_r_over_n", "trace_ratio"],
            &rows,
        ),
    ));
    Ok(b.finish(result))
}

/// Sweeps κ with the closed-form expected log-likelihood.
fn kappa_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let data = regression_data(cfg)?;
    let map = feature_map(cfg, data.input_dim())?;
    let gp = gp_column(&mut b, cfg, &data, "gp_")?;
    let mut result = FitResult::new(Task::KappaSweep.name(), "closed_form_sweep");
    let mut rows = Vec::new();
    for (i, &kappa) in cfg.kappa_values.iter().enumerate() {
        let objective = objective_config(cfg, KappaPolicy::Custom(kappa), ExpectationMode::ClosedForm);
        let col = variational_column(&mut b, cfg, &data, &map, &objective, &format!("kappa{i}_"), "tempered_elbo")?;
        let r = &col.result;
        let kernel = r.kernel.expect("variational column sets the kernel");
        let obj = r.objective.expect("selected candidate has an objective");
        let l2 = if gp.grid_mean.is_empty() {
            f64::NAN
        } else {
            l2_distance(col.grid_mean.view(), gp.grid_mean.view())
        };
        rows.push(vec![
            kappa,
            r.sigma_q_sq.unwrap_or(f64::NAN),
            kernel.length_scale,
            kernel.output_scale,
            r.metrics.get("train_rmse").copied().unwrap_or(f64::NAN),
            l2,
            obj.expected_loglik,
            obj.kl,
            obj.total,
        ]);
        result.parts.insert(format!("kappa{i}"), col.result);
    }
    result.parts.insert("gp".into(), gp.result);
    result.grid_files.push(b.add(
        "kappa_sweep.csv".into(),
        table_csv(
            &["kappa", "sigma_q_sq", "length_scale", "output_scale", "train_rmse", "l2_to_gp", "expected_loglik", "kl", "total"],
            &rows,
        ),
    ));
    Ok(b.finish(result))
}

#[allow(clippy::too_many_arguments)]
fn classification_metrics<M: ClassifierModel<f64> + ?Sized>(
    result: &mut FitResult,
    model: &M,
    theta: ArrayView1<f64>,
    hyper: &[f64],
    q: Option<&deelbo::posterior::IsotropicGaussianQ<f64>>,
    cfg: &ExperimentConfig,
    train: &ClassificationData<f64>,
    test: Option<&ClassificationData<f64>>,
) -> Result<()> {
    let p = predict_point(model, theta, hyper, train.inputs.view())?;
    result.metric("train_accuracy", accuracy(p.view(), &train.labels));
    result.metric("train_nll", mean_nll(p.view(), &train.labels));
    if let Some(test) = test {
        let p = predict_point(model, theta, hyper, test.inputs.view())?;
        result.metric("test_accuracy", accuracy(p.view(), &test.labels));
        result.metric("test_nll", mean_nll(p.view(), &test.labels));
        result.metric("test_majority_rate", test.majority_rate());
        if let Some(q) = q {
            let seed = stream_seed(cfg.seed, Stream::McEval);
            let pm = predict_mc(model, q, hyper, test.inputs.view(), cfg.classifier.predictive_samples, seed)?;
            result.metric("test_accuracy_mc", accuracy(pm.view(), &test.labels));
            result.metric("test_nll_mc", mean_nll(pm.view(), &test.labels));
        }
    }
    Ok(())
}

/// Class probabilities on a 50×50 grid around 2-D training inputs.
fn probability_grid<M: ClassifierModel<f64> + ?Sized>(
    model: &M,
    theta: ArrayView1<f64>,
    hyper: &[f64],
    train: &ClassificationData<f64>,
) -> Result<String> {
    let side = 50;
    let bounds: Vec<(f64, f64)> = (0..2)
        .map(|j| {
            let col = train.inputs.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            (lo, hi)
        })
        .collect();
    let step = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (side - 1) as f64;
    let x = Array2::from_shape_fn((side * side, 2), |(i, j)| {
        if j == 0 {
            step(bounds[0], i / side)
        } else {
            step(bounds[1], i % side)
        }
    });
    let p = predict_point(model, theta, hyper, x.view())?;
    Ok(probability_grid_csv(x.view(), p.view()))
}

fn fit_classifier(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.classifier.model {
        ClassifierKind::Rff => fit_rff_classifier_task(cfg),
        ClassifierKind::Transfer => fit_transfer_task(cfg),
    }
}

fn kappa_method(kappa: KappaPolicy<f64>) -> &'static str {
    match kappa {
        KappaPolicy::Standard => "elbo",
        KappaPolicy::DataEmphasized => "de_elbo",
        KappaPolicy::Custom(_) => "tempered_elbo",
    }
}

fn fit_rff_classifier_task(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let (train, test) = classification_data(cfg)?;
    let map = feature_map(cfg, train.input_dim())?;
    let c = &cfg.classifier;
    let (mut result, likelihood, theta, hyper, q) = match c.method {
        ClassifierMethod::Elbo => {
            let likelihood = RffClassifierLikelihood::new(
                map.clone(),
                train.inputs.clone(),
                train.labels.clone(),
                train.class_count,
                init_kernel(cfg)?,
                cfg.learn_kernel,
            )?;
            let objective = objective_config(cfg, cfg.kappa, cfg.expectation);
            let fit = fit_rff_classifier(&likelihood, &objective, &cfg.learning_rates, cfg.epochs)
                .context("RFF classifier fit")?;
            let mut result = FitResult::new(Task::FitClassifier.name(), kappa_method(cfg.kappa)).with_variational(&fit);
            result.kernel = Some(likelihood.kernel_from_hyper(&fit.winner().state.hyper));
            result.trace_files = trace_files(&mut b, "", &fit);
            let w = fit.winner();
            let q = fit.posterior()?;
            (result, likelihood, w.state.mean.clone(), w.state.hyper.clone(), Some(q))
        }
        ClassifierMethod::MapGrid => {
            let fit = fit_map_grid_search_rff_classifier(
                &map,
                &train,
                cfg.length_scale,
                &cfg.map_output_scales,
                &cfg.learning_rates,
                cfg.map_epochs,
                stream_seed(cfg.seed, Stream::Split),
            )
            .context("RFF classifier grid search")?;
            let kernel = KernelParams::new(cfg.length_scale, fit.winner().cell[0])?;
            let mut result = FitResult::new(Task::FitClassifier.name(), "map_grid_search").with_grid_search(&fit);
            result.kernel = Some(kernel);
            result.trace_files = scalar_trace_files(&mut b, "map_refit_", "objective", &[&fit.refit.trace]);
            let likelihood = RffClassifierLikelihood::new(
                map.clone(),
                train.inputs.clone(),
                train.labels.clone(),
                train.class_count,
                kernel,
                false,
            )?;
            (result, likelihood, fit.refit.theta.clone(), Vec::new(), None)
        }
    };
    classification_metrics(&mut result, &likelihood, theta.view(), &hyper, q.as_ref(), cfg, &train, test.as_ref())?;
    if train.input_dim() == 2 {
        let grid = probability_grid(&likelihood, theta.view(), &hyper, &train)?;
        result.grid_files.push(b.add("probability_grid.csv".into(), grid));
    }
    Ok(b.finish(result))
}

fn fit_transfer_task(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut b = Builder::new(cfg);
    let c = &cfg.classifier;
    let task = generate_transfer_task::<f64>(&c.transfer, cfg.seed)?;
    let model = &task.model;
    let pretrained = pretrain_backbone(model, &task.source, &c.pretrain, derive_seed(cfg.seed, "pretrain"))
        .context("pretraining the backbone")?;
    let variant = match c.prior {
        PriorName::L2Zero => PriorVariant::L2Zero,
        PriorName::L2Sp => PriorVariant::L2Sp,
        PriorName::Ptyl => pretrained.ptyl_variant(),
    };
    let (mut result, theta, q) = match c.method {
        ClassifierMethod::Elbo => {
            let spec = PriorSpec::new(variant, c.initial_lambda, c.initial_tau);
            let objective = objective_config(cfg, cfg.kappa, cfg.expectation);
            let fit = fit_de_elbo_classifier(
                model,
                &task.target,
                pretrained.mean.view(),
                &spec,
                &objective,
                &cfg.learning_rates,
                cfg.epochs,
            )
            .context("transfer classifier fit")?;
            let mut result = FitResult::new(Task::FitClassifier.name(), kappa_method(cfg.kappa)).with_variational(&fit);
            result.trace_files = trace_files(&mut b, "", &fit);
            (result, fit.winner().state.mean.clone(), Some(fit.posterior()?))
        }
        ClassifierMethod::MapGrid => {
            let grid: Vec<Vec<f64>> = c
                .grid_alpha
                .iter()
                .flat_map(|&a| c.grid_beta.iter().map(move |&bb| vec![a, bb]))
                .collect();
            let fit = fit_map_grid_search_classifier(
                model,
                &task.target,
                pretrained.mean.view(),
                &variant,
                &grid,
                &cfg.learning_rates,
                cfg.map_epochs,
                stream_seed(cfg.seed, Stream::Split),
            )
            .context("transfer classifier grid search")?;
            let mut result = FitResult::new(Task::FitClassifier.name(), "map_grid_search").with_grid_search(&fit);
            result.trace_files = scalar_trace_files(&mut b, "map_refit_", "objective", &[&fit.refit.trace]);
            (result, fit.refit.theta.clone(), None)
        }
    };
    result.metric("backbone_dim", model.backbone_dim() as f64);
    result.metric("head_dim", model.head_dim() as f64);
    classification_metrics(&mut result, model, theta.view(), &[], q.as_ref(), cfg, &task.target, Some(&task.test))?;
    Ok(b.finish(result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_names_drop_trailing_zero() {
        assert_eq!(column_name(1.0), "map_gs_l1");
        assert_eq!(column_name(20.0), "map_gs_l20");
        assert_eq!(column_name(0.5), "map_gs_l0.5");
    }
}
