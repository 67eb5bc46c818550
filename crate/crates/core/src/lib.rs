//! Regression-adjusted estimation of average treatment effects in trials
//! that use covariate-adaptive randomization.
//!
//! The crate covers the full pipeline: trial data handling, sequential
//! randomization schemes, a coordinate-descent Lasso, the stratified
//! difference-in-means and OLS/Lasso adjusted estimators, nonparametric
//! variance estimation, and a Monte Carlo harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod lasso;
pub mod linalg;
pub mod randomization;
pub mod rng;
pub mod sim;
pub mod variance;

pub use data::{Arm, PotentialOutcomes, TrialDataset};
pub use error::{Error, Result};
pub use estimators::{AdjustedVectors, EstimatorConfig, EstimatorKind, TreatmentEffectEstimate};
pub use lasso::{LassoConfig, LassoFit};
pub use linalg::Matrix;
pub use randomization::{RandomizationScheme, Unit, Variant};
pub use sim::{ModelId, ModelSpec, ReplicationReport, SimConfig};
pub use variance::{ConfidenceInterval, VarianceEstimate};
