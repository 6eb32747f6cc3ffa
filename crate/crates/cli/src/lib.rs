//! Command-line front end: configuration, CSV input and output, per-task
//! orchestration and reproducibility checks.

pub mod cli;
pub mod config;
pub mod io;
pub mod report;
pub mod run;
pub mod tasks;
