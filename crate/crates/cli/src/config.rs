//! Experiment configuration: JSON file, then `--set key=value` overrides,
//! then validation with the offending field named in every error.

use std::path::PathBuf;

use deelbo::classifiers::{PretrainOptions, TransferTaskConfig};
use deelbo::data::BlobLayout;
use deelbo::variational::{ExpectationMode, KappaPolicy};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
}

fn field_err<T>(field: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GenRegression,
    GenClassification,
    FitRff,
    FitGp,
    FitClassifier,
    CompareFig2,
    LemmaSweep,
    KappaSweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::GenRegression => "gen-regression",
            Self::GenClassification => "gen-classification",
            Self::FitRff => "fit-rff",
            Self::FitGp => "fit-gp",
            Self::FitClassifier => "fit-classifier",
            Self::CompareFig2 => "compare-fig2",
            Self::LemmaSweep => "lemma-sweep",
            Self::KappaSweep => "kappa-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Random Fourier features with a linear softmax head.
    Rff,
    /// Pretrained dense encoder plus head on the synthetic transfer task.
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMethod {
    /// Tempered ELBo with the configured κ policy.
    Elbo,
    /// MAP point estimates with a validation grid search.
    MapGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorName {
    L2Zero,
    L2Sp,
    Ptyl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub model: ClassifierKind,
    pub method: ClassifierMethod,
    pub class_count: usize,
    pub blobs: BlobLayout,
    /// Size of the held-out set generated alongside synthetic data.
    pub test_count: usize,
    pub prior: PriorName,
    pub initial_lambda: f64,
    pub initial_tau: f64,
    pub transfer: TransferTaskConfig,
    pub pretrain: PretrainOptions,
    /// Candidate `α/N` values for the backbone (transfer) penalty.
    pub grid_alpha: Vec<f64>,
    /// Candidate `β/N` values for the head (transfer) penalty.
    pub grid_beta: Vec<f64>,
    /// Draws for the Monte Carlo predictive.
    pub predictive_samples: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let grid = vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0];
        Self {
            model: ClassifierKind::Rff,
            method: ClassifierMethod::Elbo,
            class_count: 2,
            blobs: BlobLayout::default(),
            test_count: 1000,
            prior: PriorName::L2Sp,
            initial_lambda: 1.0,
            initial_tau: 1.0,
            transfer: TransferTaskConfig::default(),
            pretrain: PretrainOptions::default(),
            grid_alpha: grid.clone(),
            grid_beta: grid,
            predictive_samples: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub seed: u64,
    /// CSV dataset; generated from `seed` when absent.
    pub data: Option<PathBuf>,
    /// Optional held-out CSV for classifier metrics.
    pub test_data: Option<PathBuf>,
    pub n: usize,
    pub noise_var: f64,
    pub x_range: [f64; 2],
    pub grid_range: [f64; 2],
    pub grid_points: usize,
    /// R.
    pub features: usize,
    pub length_scale: f64,
    pub output_scale: f64,
    pub learn_kernel: bool,
    /// σ_y.
    pub noise_std: f64,
    pub kappa: KappaPolicy<f64>,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub sample_count_train: usize,
    pub sample_count_eval: usize,
    pub expectation: ExpectationMode,
    pub init_sigma_q: f64,
    pub gp_steps: usize,
    /// Fixed length-scales of the MAP + grid-search columns.
    pub map_length_scales: Vec<f64>,
    /// Output-scale grid searched by the MAP columns.
    pub map_output_scales: Vec<f64>,
    pub map_epochs: usize,
    pub lemma_features: Vec<usize>,
    pub lemma_seeds: usize,
    pub kappa_values: Vec<f64>,
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: None,
            seed: 0,
            data: None,
            test_data: None,
            n: 20,
            noise_var: 0.01,
            x_range: [-2.0, 2.0],
            grid_range: [-3.0, 3.0],
            grid_points: 200,
            features: 1024,
            length_scale: 1.0,
            output_scale: 1.0,
            learn_kernel: true,
            noise_std: 0.1,
            kappa: KappaPolicy::DataEmphasized,
            learning_rates: vec![0.1, 0.01, 0.001, 0.0001],
            epochs: 2000,
            sample_count_train: 1,
            sample_count_eval: 10,
            expectation: ExpectationMode::MonteCarlo,
            init_sigma_q: 0.1,
            gp_steps: 2000,
            map_length_scales: vec![1.0, 20.0],
            map_output_scales: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            map_epochs: 2000,
            lemma_features: vec![64, 256, 1024, 4096],
            lemma_seeds: 10,
            kappa_values: vec![1.0, 5.0, 10.0, 25.0, 51.2, 100.0, 500.0],
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Set `path` (dot-separated) in a JSON object. The value is parsed as JSON
/// and kept as a string when it does not parse.
pub fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return field_err(path, "empty path segment");
        }
        let Value::Object(map) = node else {
            return field_err(path, format!("`{}` is not an object", parts[..i].join(".")));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

impl ExperimentConfig {
    /// Defaults, overlaid by the JSON file (if any), overlaid by `overrides`.
    pub fn load(path: Option<&std::path::Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut json = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                serde_json::from_str::<Value>(&text).map_err(|e| ConfigError::Read {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            None => Value::Object(Default::default()),
        };
        if !json.is_object() {
            return Err(ConfigError::Parse("top level must be a JSON object".into()));
        }
        for (k, v) in overrides {
            set_path(&mut json, k, v)?;
        }
        serde_path_to_error::deserialize(json).map_err(|e| {
            let field = e.path().to_string();
            let message = e.into_inner().to_string();
            if field == "." {
                ConfigError::Parse(message)
            } else {
                ConfigError::Field { field, message }
            }
        })
    }

    /// Checks the fields `task` reads.
    pub fn validate(&self, task: Task) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                field_err(field, format!("must be positive and finite, got {v}"))
            }
        };
        let range = |field: &str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] < r[1] {
                Ok(())
            } else {
                field_err(field, format!("must be [lo, hi] with lo < hi, got {r:?}"))
            }
        };
        let regression = matches!(
            task,
            Task::GenRegression | Task::FitRff | Task::FitGp | Task::CompareFig2 | Task::LemmaSweep | Task::KappaSweep
        );
        if regression && self.data.is_none() {
            if self.n < 2 {
                return field_err("n", format!("need at least 2 points, got {}", self.n));
            }
            if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
                return field_err("noise_var", "must be non-negative and finite");
            }
            range("x_range", self.x_range)?;
        }
        if task == Task::GenRegression {
            return Ok(());
        }
        if task == Task::GenClassification || task == Task::FitClassifier {
            let c = &self.classifier;
            if c.class_count < 2 {
                return field_err("classifier.class_count", "need at least 2 classes");
            }
            if task == Task::GenClassification || (c.model == ClassifierKind::Rff && self.data.is_none()) {
                if self.n < 2 * c.class_count {
                    return field_err("n", format!("need N ≥ 2C = {}, got {}", 2 * c.class_count, self.n));
                }
                positive("classifier.blobs.spread", c.blobs.spread)?;
            }
            if task == Task::GenClassification {
                return Ok(());
            }
            if c.model == ClassifierKind::Transfer {
                if self.data.is_some() {
                    return field_err("data", "the transfer classifier generates its own source and target tasks");
                }
                if c.transfer.layer_sizes.len() < 2 || c.transfer.layer_sizes.contains(&0) {
                    return field_err("classifier.transfer.layer_sizes", "need an input size and at least one positive layer");
                }
                positive("classifier.initial_lambda", c.initial_lambda)?;
                positive("classifier.initial_tau", c.initial_tau)?;
            }
            if c.method == ClassifierMethod::MapGrid {
                let grid_ok = |g: &[f64]| !g.is_empty() && g.iter().all(|v| *v >= 0.0 && v.is_finite());
                if c.model == ClassifierKind::Transfer {
                    if !grid_ok(&c.grid_alpha) {
                        return field_err("classifier.grid_alpha", "must be a non-empty list of non-negative values");
                    }
                    if !grid_ok(&c.grid_beta) {
                        return field_err("classifier.grid_beta", "must be a non-empty list of non-negative values");
                    }
                } else if self.map_output_scales.is_empty() || self.map_output_scales.iter().any(|v| !(*v > 0.0)) {
                    return field_err("map_output_scales", "must be a non-empty list of positive values");
                }
            }
            if c.predictive_samples == 0 {
                return field_err("classifier.predictive_samples", "must be at least 1");
            }
        }
        if task != Task::LemmaSweep
            && (self.learning_rates.is_empty() || self.learning_rates.iter().any(|v| !(*v >= 0.0 && v.is_finite())))
        {
            return field_err("learning_rates", "must be a non-empty list of non-negative values");
        }
        if matches!(task, Task::FitRff | Task::FitClassifier | Task::CompareFig2 | Task::KappaSweep) {
            if self.epochs == 0 {
                return field_err("epochs", "must be at least 1");
            }
            if self.sample_count_train == 0 {
                return field_err("sample_count_train", "must be at least 1");
            }
            if self.sample_count_eval == 0 {
                return field_err("sample_count_eval", "must be at least 1");
            }
            positive("init_sigma_q", self.init_sigma_q)?;
            if let KappaPolicy::Custom(k) = self.kappa {
                positive("kappa", k)?;
            }
        }
        let uses_rff = !(task == Task::FitGp || (task == Task::FitClassifier && self.classifier.model == ClassifierKind::Transfer));
        if uses_rff && task != Task::LemmaSweep && self.features == 0 {
            return field_err("features", "must be at least 1");
        }
        if task != Task::FitClassifier {
            positive("noise_std", self.noise_std)?;
        }
        positive("length_scale", self.length_scale)?;
        positive("output_scale", self.output_scale)?;
        if matches!(task, Task::FitRff | Task::FitGp | Task::CompareFig2 | Task::KappaSweep) {
            range("grid_range", self.grid_range)?;
            if self.grid_points == 0 {
                return field_err("grid_points", "must be at least 1");
            }
        }
        if matches!(task, Task::FitGp | Task::CompareFig2 | Task::KappaSweep) && self.gp_steps == 0 {
            return field_err("gp_steps", "must be at least 1");
        }
        if task == Task::CompareFig2 {
            if self.map_length_scales.is_empty() || self.map_length_scales.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return field_err("map_length_scales", "must be a non-empty list of positive values");
            }
            if self.map_output_scales.is_empty() || self.map_output_scales.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return field_err("map_output_scales", "must be a non-empty list of positive values");
            }
        }
        if (task == Task::CompareFig2 || (task == Task::FitClassifier && self.classifier.method == ClassifierMethod::MapGrid))
            && self.map_epochs == 0
        {
            return field_err("map_epochs", "must be at least 1");
        }
        if task == Task::LemmaSweep {
            if self.lemma_features.is_empty() || self.lemma_features.contains(&0) {
                return field_err("lemma_features", "must be a non-empty list of positive feature counts");
            }
            if self.lemma_seeds == 0 {
                return field_err("lemma_seeds", "must be at least 1");
            }
        }
        if task == Task::KappaSweep && (self.kappa_values.is_empty() || self.kappa_values.iter().any(|v| !(*v > 0.0 && v.is_finite()))) {
            return field_err("kappa_values", "must be a non-empty list of positive values");
        }
        Ok(())
    }
}
