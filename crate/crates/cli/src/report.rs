//! The JSON result of a run.

use std::collections::BTreeMap;

use deelbo::gp::GpHyperFit;
use deelbo::kernel::KernelParams;
use deelbo::map::GridSearchFit;
use deelbo::posterior::ObjectiveBreakdown;
use deelbo::variational::VariationalFit;
use serde::{Deserialize, Serialize};

/// One candidate considered during selection: a learning rate, plus the
/// grid cell for grid searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cell: Vec<f64>,
    /// Final objective (variational, GP) or validation NLL (grid search).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitResult {
    pub task: String,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelParams<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// ‖ψ mean‖₂.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_q_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveBreakdown<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub selection: Vec<CandidateRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace_files: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid_files: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// SHA-256 of every other file of the run, keyed by file name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
    /// Sub-results, e.g. the columns of a comparison.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub parts: BTreeMap<String, FitResult>,
}

impl FitResult {
    pub fn new(task: &str, method: &str) -> Self {
        Self {
            task: task.to_string(),
            method: method.to_string(),
            ..Default::default()
        }
    }

    /// Records a metric. Non-finite values cannot be stored in JSON and are
    /// kept as a note instead.
    pub fn metric(&mut self, name: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.to_string(), value);
        } else {
            self.metrics.remove(name);
            self.notes.push(format!("metric {name} is {value}"));
        }
    }

    /// Fills ψ, λ, τ, objective and selection from a variational fit.
    pub fn with_variational(mut self, fit: &VariationalFit<f64>) -> Self {
        let w = fit.winner();
        self.kappa = Some(fit.kappa);
        self.mean_norm = Some(w.state.mean.dot(&w.state.mean).sqrt());
        self.sigma_q_sq = Some(w.state.sigma_q_sq());
        if let Some(last) = w.trace.last() {
            self.lambda = Some(last.lambda);
            self.tau = Some(last.tau);
        }
        self.objective = w.final_objective;
        self.selection = fit
            .candidates
            .iter()
            .map(|c| CandidateRecord {
                learning_rate: c.learning_rate,
                cell: Vec::new(),
                score: c.final_objective.map(|o| o.total),
                failure: c.failure.clone(),
            })
            .collect();
        self.selected = Some(fit.selected);
        self
    }

    pub fn with_grid_search(mut self, fit: &GridSearchFit<f64>) -> Self {
        self.selection = fit
            .cells
            .iter()
            .map(|c| CandidateRecord {
                learning_rate: c.learning_rate,
                cell: c.cell.clone(),
                score: c.validation_nll,
                failure: c.failure.clone(),
            })
            .collect();
        self.selected = Some(fit.selected);
        self.mean_norm = Some(fit.refit.theta.dot(&fit.refit.theta).sqrt());
        if let Some(v) = fit.refit.objective {
            self.metric("map_objective", v);
        }
        self
    }

    pub fn with_gp(mut self, fit: &GpHyperFit<f64>) -> Self {
        self.kernel = Some(fit.kernel);
        self.selection = fit
            .candidates
            .iter()
            .map(|c| CandidateRecord {
                learning_rate: c.learning_rate,
                cell: Vec::new(),
                score: c.final_log_marginal,
                failure: c.failure.clone(),
            })
            .collect();
        self.selected = Some(fit.selected);
        self.metric("log_marginal", fit.log_marginal);
        self.metric("final_grad_norm", fit.final_grad_norm);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("FitResult serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
