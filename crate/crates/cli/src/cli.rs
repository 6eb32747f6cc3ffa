//! Argument parsing and exit codes.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig, Task};
use crate::io::CsvError;
use crate::run::{check_run, run_dir, write_run};
use crate::tasks;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECK_MISMATCH: i32 = 3;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "DEELBO_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "deelbo", version, about = "Tempered-ELBo experiments with random Fourier features and transfer classifiers")]
pub struct Cli {
    /// Root seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root. Each run goes to `<out-dir>/<task>-seed<seed>`.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Recompute the run and compare it with the stored one instead of writing.
    #[arg(long, global = true)]
    pub check: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a 1-D toy regression dataset.
    GenRegression(TaskArgs),
    /// Generate a Gaussian-blob classification dataset.
    GenClassification(TaskArgs),
    /// Variational RFF regression.
    FitRff(TaskArgs),
    /// Exact GP regression with marginal-likelihood hyperparameters.
    FitGp(TaskArgs),
    /// RFF or transfer classifier, variational or MAP with grid search.
    FitClassifier(TaskArgs),
    /// MAP+GS, ELBo, DE ELBo and GP on one regression dataset.
    CompareFig2(TaskArgs),
    /// Closed-form optimal shared variance against the feature count.
    LemmaSweep(TaskArgs),
    /// Closed-form tempered fits over a list of κ values.
    KappaSweep(TaskArgs),
}

impl Command {
    pub fn task(&self) -> (Task, &TaskArgs) {
        match self {
            Command::GenRegression(a) => (Task::GenRegression, a),
            Command::GenClassification(a) => (Task::GenClassification, a),
            Command::FitRff(a) => (Task::FitRff, a),
            Command::FitGp(a) => (Task::FitGp, a),
            Command::FitClassifier(a) => (Task::FitClassifier, a),
            Command::CompareFig2(a) => (Task::CompareFig2, a),
            Command::LemmaSweep(a) => (Task::LemmaSweep, a),
            Command::KappaSweep(a) => (Task::KappaSweep, a),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TaskArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config field, e.g. `--set classifier.prior=ptyl`. The
    /// value is read as JSON, falling back to a string.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub set: Vec<(String, String)>,
    /// Training data CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test data CSV (classification).
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of random Fourier features R.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated learning-rate candidates.
    #[arg(long, value_delimiter = ',')]
    pub learning_rates: Option<Vec<f64>>,
    /// `standard`, `data_emphasized` or a positive number.
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub noise_var: Option<f64>,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

fn json_str<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain values serialize")
}

impl TaskArgs {
    /// `--set` pairs followed by the dedicated flags, so the flags win.
    pub fn overrides(&self, seed: Option<u64>) -> Vec<(String, String)> {
        let mut out = self.set.clone();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(s) = seed {
            push("seed", s.to_string());
        }
        if let Some(p) = &self.data {
            push("data", json_str(p));
        }
        if let Some(p) = &self.test_data {
            push("test_data", json_str(p));
        }
        if let Some(n) = self.n {
            push("n", n.to_string());
        }
        if let Some(r) = self.features {
            push("features", r.to_string());
        }
        if let Some(e) = self.epochs {
            push("epochs", e.to_string());
        }
        if let Some(l) = &self.learning_rates {
            push("learning_rates", json_str(l));
        }
        if let Some(k) = &self.kappa {
            let v = match k.parse::<f64>() {
                Ok(x) => format!("{{\"custom\":{}}}", json_str(&x)),
                Err(_) => json_str(k),
            };
            push("kappa", v);
        }
        if let Some(s) = self.noise_std {
            push("noise_std", json_str(&s));
        }
        if let Some(v) = self.noise_var {
            push("noise_var", json_str(&v));
        }
        out
    }
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<ConfigError>().is_some() || c.downcast_ref::<CsvError>().is_some())
}

/// Runs the parsed command and returns the process exit code. Messages go
/// to stderr; the run directory is printed on stdout.
pub fn execute(cli: &Cli) -> i32 {
    let (task, args) = cli.command.task();
    let config = match ExperimentConfig::load(args.config.as_deref(), &args.overrides(cli.seed)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let output = match tasks::run(task, &config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return if is_usage_error(&e) { EXIT_USAGE } else { EXIT_RUN_FAILED };
        }
    };
    let dir = run_dir(&cli.out_dir, task.name(), config.seed);
    if cli.check {
        return match check_run(&dir, &output) {
            Ok(problems) if problems.is_empty() => {
                println!("{}: reproduced", dir.display());
                EXIT_OK
            }
            Ok(problems) => {
                for p in problems {
                    eprintln!("mismatch: {p}");
                }
                EXIT_CHECK_MISMATCH
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_CHECK_MISMATCH
            }
        };
    }
    if let Err(e) = write_run(&dir, &output) {
        eprintln!("error: {e:#}");
        return EXIT_RUN_FAILED;
    }
    println!("{}", dir.display());
    EXIT_OK
}

/// Parses `args` (including the program name) and runs. Parse failures
/// print clap's message and return its exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            code
        }
    }
}
