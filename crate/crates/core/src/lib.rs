//! Data-emphasized variational inference for over-parameterized models:
//! random-Fourier-feature regression and classification, an exact GP
//! reference, closed-form prior-scale updates for transfer learning, and a
//! tempered-ELBo trainer.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choice.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod map;
pub mod optim;
pub mod posterior;
pub mod rff;
pub mod rng;
pub mod scalar;
pub mod variational;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type KernelParams64 = kernel::KernelParams<f64>;
pub type RffFeatureMap64 = kernel::RffFeatureMap<f64>;
pub type IsotropicGaussianQ64 = posterior::IsotropicGaussianQ<f64>;
pub type ObjectiveBreakdown64 = posterior::ObjectiveBreakdown<f64>;
pub type GaussianPrior64 = variational::GaussianPrior<f64>;
pub type TraceRow64 = variational::TraceRow<f64>;
pub type VariationalFit64 = variational::VariationalFit<f64>;
pub type GpModel64 = gp::GpModel<f64>;
pub type RegressionData64 = data::RegressionData<f64>;
pub type ClassificationData64 = data::ClassificationData<f64>;

pub type KernelParams32 = kernel::KernelParams<f32>;
pub type RffFeatureMap32 = kernel::RffFeatureMap<f32>;
pub type IsotropicGaussianQ32 = posterior::IsotropicGaussianQ<f32>;
pub type ObjectiveBreakdown32 = posterior::ObjectiveBreakdown<f32>;
pub type GaussianPrior32 = variational::GaussianPrior<f32>;
pub type TraceRow32 = variational::TraceRow<f32>;
pub type VariationalFit32 = variational::VariationalFit<f32>;
pub type GpModel32 = gp::GpModel<f32>;
pub type RegressionData32 = data::RegressionData<f32>;
pub type ClassificationData32 = data::ClassificationData<f32>;
