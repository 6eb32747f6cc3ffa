//! Numerical checks against independently computed references.

use deelbo::classifiers::{
    fit_de_elbo_classifier, generate_transfer_task, predict_mc, predict_point, PriorSpec, PriorVariant,
    RffClassifierLikelihood, TransferLikelihood, TransferTaskConfig,
};
use deelbo::data::{accuracy, generate_toy_regression, rmse, RegressionData};
use deelbo::gp::{gp_fit_hyperparams, gp_log_marginal, gp_predict, GpFit, GpFitOptions, GpModel};
use deelbo::kernel::{KernelParams, RffFeatureMap};
use deelbo::map::{map_objective_and_grad, GaussianPenalty, PenaltyBlock};
use deelbo::posterior::IsotropicGaussianQ;
use deelbo::rff::{
    elbo_isotropic, exact_posterior, fit_rff_regression, log_marginal_likelihood, predictive_posterior,
    RffRegressionLikelihood,
};
use deelbo::variational::{
    mc_expected_loglik, ExpectationMode, KappaPolicy, LikelihoodModel, TemperedObjectiveConfig,
};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

const LN_2PI: f64 = 1.8378770664093453;

fn toy(n: usize, seed: u64) -> RegressionData<f64> {
    generate_toy_regression(n, 0.01, (-2.0, 2.0), seed).unwrap()
}

fn unit_kernel() -> KernelParams<f64> {
    KernelParams::new(1.0, 1.0).unwrap()
}

#[test]
fn feature_gram_trace_matches_the_kernel_variance() {
    let data = toy(30, 4);
    for (seed, s) in (0..20).zip([0.5, 1.0, 2.0].into_iter().cycle()) {
        let map = RffFeatureMap::sample(1, 4096, seed).unwrap();
        let phi = map.featurize(&KernelParams::new(0.8, s).unwrap(), data.inputs.view()).unwrap();
        let ratio = phi.trace_gram() / (s * s * data.len() as f64);
        assert!((ratio - 1.0).abs() <= 0.1, "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn isotropic_objective_matches_term_by_term() {
    let data = toy(25, 1);
    let map = RffFeatureMap::sample(1, 40, 2).unwrap();
    let phi = map.featurize(&unit_kernel(), data.inputs.view()).unwrap();
    let mean = Array1::linspace(-0.5, 0.5, 40);
    let (v, sy, kappa) = (0.3, 0.2, 1.6);
    let q = IsotropicGaussianQ::new(mean.clone(), v).unwrap();
    let got = elbo_isotropic(&q, &phi, data.targets.view(), sy, kappa).unwrap();

    let p = phi.values();
    let (n, r) = (data.len() as f64, 40.0);
    let mut sq = 0.0;
    for i in 0..data.len() {
        let f: f64 = (0..40).map(|j| p[[i, j]] * mean[j]).sum();
        sq += (data.targets[i] - f).powi(2);
    }
    let tr: f64 = p.iter().map(|x| x * x).sum();
    let ell = -0.5 * n * (LN_2PI + (sy * sy).ln()) - (sq + v * tr) / (2.0 * sy * sy);
    let kl = 0.5 * (v * r + mean.dot(&mean) - r - r * v.ln());
    assert!((got.expected_loglik - ell).abs() <= 1e-10 * ell.abs());
    assert!((got.kl - kl).abs() <= 1e-10 * kl.abs());
    assert!((got.total - (kappa * ell - kl)).abs() <= 1e-10 * got.total.abs());
}

#[test]
fn log_marginal_matches_a_dense_oracle() {
    let data = toy(18, 3);
    let map = RffFeatureMap::sample(1, 30, 5).unwrap();
    let phi = map.featurize(&KernelParams::new(0.7, 1.3).unwrap(), data.inputs.view()).unwrap();
    let sy = 0.25;
    let got = log_marginal_likelihood(&phi, data.targets.view(), sy).unwrap();

    let n = data.len();
    let p = DMatrix::from_fn(n, 30, |i, j| phi.values()[[i, j]]);
    let cov = &p * p.transpose() + DMatrix::identity(n, n) * (sy * sy);
    let y = DVector::from_iterator(n, data.targets.iter().copied());
    let chol = cov.cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let want = -0.5 * (n as f64 * LN_2PI + logdet + y.dot(&chol.solve(&y)));
    assert!((got - want).abs() <= 1e-10 * want.abs(), "{got} vs {want}");

    let gp = GpModel::new(KernelParams::new(0.7, 1.3).unwrap(), sy).unwrap();
    assert!(gp_log_marginal(data.inputs.view(), data.targets.view(), &gp).unwrap().is_finite());
}

#[test]
fn rff_predictive_approaches_the_gp() {
    let data = toy(20, 7);
    let kernel = KernelParams::new(0.6, 1.0).unwrap();
    let sy = 0.1;
    let grid = Array2::from_shape_fn((50, 1), |(i, _)| -2.0 + 4.0 * i as f64 / 49.0);
    let gp = GpFit::new(GpModel::new(kernel, sy).unwrap(), data.inputs.view(), data.targets.view()).unwrap();
    let (gp_mean, gp_var) = gp_predict(&gp, grid.view()).unwrap();

    let mut errors = Vec::new();
    for r in [32, 256, 1024] {
        let mut err = 0.0;
        for seed in 0..5 {
            let map = RffFeatureMap::sample(1, r, 100 + seed).unwrap();
            let phi = map.featurize(&kernel, data.inputs.view()).unwrap();
            let post = exact_posterior(&phi, data.targets.view(), sy).unwrap();
            let phi_star = map.featurize(&kernel, grid.view()).unwrap();
            let (m, v) = predictive_posterior(&post, &phi_star, sy).unwrap();
            err += (&m - &gp_mean).mapv(f64::abs).mean().unwrap() + (&v - &gp_var).mapv(f64::abs).mean().unwrap();
        }
        errors.push(err / 5.0);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(errors[2] < 0.05, "{errors:?}");
}

#[test]
fn gp_hyperparameter_fit_raises_the_evidence() {
    let x = Array2::from_shape_fn((30, 1), |(i, _)| -1.5 + 3.0 * i as f64 / 29.0);
    let y = x.column(0).mapv(|v| (3.0 * v).sin());
    let init = KernelParams::new(2.0, 0.5).unwrap();
    let start = gp_log_marginal(x.view(), y.view(), &GpModel::new(init, 0.1).unwrap()).unwrap();
    let options = GpFitOptions {
        steps: 300,
        ..GpFitOptions::default()
    };
    let fit = gp_fit_hyperparams(x.view(), y.view(), &init, 0.1, &[0.01, 0.05], &options).unwrap();
    assert!(fit.log_marginal > start + 1.0, "{start} -> {}", fit.log_marginal);
    assert!(fit.kernel.length_scale < 2.0);
}

#[test]
fn mc_expected_loglik_is_unbiased() {
    let data = toy(20, 11);
    let map = RffFeatureMap::sample(1, 32, 12).unwrap();
    let model = RffRegressionLikelihood::new(map, data.inputs.clone(), data.targets.clone(), 0.3, unit_kernel(), false)
        .unwrap();
    let mean = Array1::from_elem(32, 0.05);
    let v = 0.2;
    let q = IsotropicGaussianQ::new(mean.clone(), v).unwrap();
    let exact = model.expected_log_likelihood_grad(mean.view(), v, &[]).unwrap().unwrap().value;
    let loglik = |t: ndarray::ArrayView1<f64>| model.log_likelihood(t, &[]);

    let big = mc_expected_loglik(&q, loglik, 1024, 3).unwrap();
    assert!((big.value - exact).abs() <= 3.0 * big.standard_error, "{} ± {} vs {exact}", big.value, big.standard_error);

    let draws: Vec<f64> = (0..200).map(|s| mc_expected_loglik(&q, loglik, 1, 500 + s).unwrap().value).collect();
    let m = draws.iter().sum::<f64>() / 200.0;
    let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!((m - exact).abs() <= 4.0 * sd / 200f64.sqrt(), "{m} vs {exact}");
}

#[test]
fn data_emphasis_fits_the_training_data_more_closely() {
    let data = toy(20, 21);
    let map = RffFeatureMap::sample(1, 512, 22).unwrap();
    let rmse_for = |kappa| {
        let mut config = TemperedObjectiveConfig::new(kappa, 5);
        config.expectation = ExpectationMode::ClosedForm;
        let fit = fit_rff_regression(&map, &data, unit_kernel(), 0.1, false, &config, &[0.01], 1500).unwrap();
        let phi = map.featurize(&unit_kernel(), data.inputs.view()).unwrap();
        rmse(phi.values().dot(&fit.winner().state.mean).view(), data.targets.view())
    };
    let standard = rmse_for(KappaPolicy::Standard);
    let emphasized = rmse_for(KappaPolicy::DataEmphasized);
    assert!(emphasized < standard, "kappa = D/N {emphasized} vs kappa = 1 {standard}");
}

fn small_transfer() -> deelbo::classifiers::TransferTask<f64> {
    let config = TransferTaskConfig {
        layer_sizes: vec![2, 16, 8],
        source_count: 100,
        target_count: 30,
        test_count: 300,
        ..TransferTaskConfig::default()
    };
    generate_transfer_task(&config, 3).unwrap()
}

#[test]
fn lowrank_prior_with_identity_covariance_reduces_to_l2_sp() {
    let task = small_transfer();
    let pretrained = task.teacher_backbone.mapv(|v| v + 0.05);
    let f = pretrained.len();
    let config = TemperedObjectiveConfig::new(KappaPolicy::DataEmphasized, 8);
    let run = |variant| {
        let spec = PriorSpec::new(variant, 1.0, 1.0);
        fit_de_elbo_classifier(&task.model, &task.target, pretrained.view(), &spec, &config, &[0.01], 60).unwrap()
    };
    let a = run(PriorVariant::L2Sp);
    let b = run(PriorVariant::Ptyl {
        sigma_diag: vec![2.0; f],
        factors: vec![vec![0.0; 3]; f],
    });
    let (ta, tb) = (&a.winner().trace, &b.winner().trace);
    assert_eq!(ta.len(), tb.len());
    for (x, y) in ta.iter().zip(tb) {
        for (u, w) in [(x.total, y.total), (x.lambda, y.lambda), (x.tau, y.tau), (x.sigma_q_sq, y.sigma_q_sq)] {
            assert!((u - w).abs() <= 1e-8 * u.abs().max(1.0), "epoch {}: {u} vs {w}", x.epoch);
        }
    }
}

#[test]
fn map_gradient_is_the_penalized_loss_gradient() {
    let task = small_transfer();
    let model = TransferLikelihood::new(task.model.clone(), &task.target).unwrap();
    let f = task.model.backbone_dim();
    let h = task.model.head_dim();
    let mu = task.teacher_backbone.clone();
    let (lambda, tau) = (0.3, 2.0);
    let penalty = GaussianPenalty::new(vec![
        PenaltyBlock::isotropic(mu.clone(), 1.0 / lambda),
        PenaltyBlock::isotropic(Array1::zeros(h), 1.0 / tau),
    ])
    .unwrap();
    let theta = Array1::from_shape_fn(f + h, |i| if i < f { mu[i] + 0.01 * (i % 7) as f64 } else { 0.1 * (i as f64).sin() });
    let (value, grad) = map_objective_and_grad(&model, &penalty, theta.view(), &[]).unwrap();

    let loss = |t: &Array1<f64>| {
        let w = t.slice(ndarray::s![..f]).to_owned() - &mu;
        let v = t.slice(ndarray::s![f..]);
        model.log_likelihood(t.view(), &[]).unwrap() - w.dot(&w) / (2.0 * lambda) - v.dot(&v) / (2.0 * tau)
    };
    assert!((value - loss(&theta)).abs() <= 1e-10 * value.abs());
    for i in (0..f + h).step_by(7) {
        let step = 1e-5;
        let mut up = theta.clone();
        up[i] += step;
        let mut down = theta.clone();
        down[i] -= step;
        let fd = (loss(&up) - loss(&down)) / (2.0 * step);
        assert!((grad[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "coordinate {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn teacher_centred_prior_beats_the_majority_rate() {
    let task = small_transfer();
    let spec = PriorSpec::new(PriorVariant::L2Sp, 1.0, 1.0);
    let config = TemperedObjectiveConfig::new(KappaPolicy::DataEmphasized, 4);
    let fit = fit_de_elbo_classifier(
        &task.model,
        &task.target,
        task.teacher_backbone.view(),
        &spec,
        &config,
        &[0.01, 0.001],
        400,
    )
    .unwrap();
    let probs = predict_point(&task.model, fit.winner().state.mean.view(), &[], task.test.inputs.view()).unwrap();
    let acc = accuracy(probs.view(), &task.test.labels);
    assert!(acc > task.test.majority_rate(), "accuracy {acc} vs majority {}", task.test.majority_rate());
}

#[test]
fn averaged_predictions_agree_with_the_mean_at_small_variance() {
    let data = deelbo::data::generate_toy_classification::<f64>(200, 3, deelbo::data::BlobLayout::default(), 6).unwrap();
    let map = RffFeatureMap::sample(2, 64, 7).unwrap();
    let model = RffClassifierLikelihood::new(map, data.inputs.clone(), data.labels.clone(), 3, unit_kernel(), false)
        .unwrap();
    let mean = Array1::from_shape_fn(192, |i| (i as f64 * 0.37).sin());
    let q = IsotropicGaussianQ::new(mean.clone(), 1e-4).unwrap();
    let point = predict_point(&model, mean.view(), &[], data.inputs.view()).unwrap();
    let mc = predict_mc(&model, &q, &[], data.inputs.view(), 10, 8).unwrap();
    let diff = (&point - &mc).mapv(f64::abs).mean().unwrap();
    assert!(diff < 0.05, "mean |p - p_mc| {diff}");
    let gap = (accuracy(point.view(), &data.labels) - accuracy(mc.view(), &data.labels)).abs();
    assert!(gap <= 0.01, "accuracy gap {gap}");
}

#[test]
fn vanishing_variance_is_handled() {
    let data = toy(15, 31);
    let map = RffFeatureMap::sample(1, 20, 32).unwrap();
    let phi = map.featurize(&unit_kernel(), data.inputs.view()).unwrap();
    let mean = Array1::from_elem(20, 0.1);
    let v = 1e-24;
    let q = IsotropicGaussianQ::new(mean.clone(), v).unwrap();
    let o = elbo_isotropic(&q, &phi, data.targets.view(), 0.1, 1.0).unwrap();
    assert!(o.is_finite());

    let model = RffRegressionLikelihood::new(map, data.inputs.clone(), data.targets.clone(), 0.1, unit_kernel(), false)
        .unwrap();
    let at_mean = model.log_likelihood(mean.view(), &[]).unwrap();
    let mc = mc_expected_loglik(&q, |t| model.log_likelihood(t, &[]), 8, 1).unwrap();
    assert!((mc.value - at_mean).abs() <= 1e-9 * at_mean.abs());
    assert!((o.expected_loglik - at_mean).abs() <= 1e-9 * at_mean.abs());

}
