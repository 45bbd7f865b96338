//! Difficulty modelling for move-limited puzzle levels.
//!
//! Observed moves-to-complete are right-censored by the level's move limit `M`.
//! This crate fits a negative binomial model to the observed part of the
//! distribution, checks how well the fit tracks the data and the observed
//! completion rate, summarises structure across levels, and predicts how the
//! completion rate responds to move-limit edits.
//!
//! Pipeline: [`ingestion`] → [`fitting`] → [`validation`] → [`analytics`] /
//! [`whatif`]. [`synthgen`] produces ground-truth telemetry for testing the
//! whole chain, and [`report`] holds the JSON and CSV file schemas.

pub mod analytics;
pub mod distributions;
mod error;
pub mod fitting;
pub mod ingestion;
pub mod report;
pub mod synthgen;
pub mod validation;
pub mod whatif;

pub use analytics::{ClusterLabel, MovesLeftStats, RegressionKind, RegressionResult};
pub use distributions::{Moments, NegBinParams};
pub use error::{Error, Result};
pub use fitting::{BoundaryHit, FitResult, FitterConfig};
pub use ingestion::{AttemptRecord, EmpiricalLevelData, IngestionConfig};
pub use validation::{Correction, ValidationReport};
pub use whatif::{SensitivityGrid, WhatIfQuery};
