//! Diagnostics for the true-martingale property of stochastic exponentials
//! `z = E(M)` of semimartingales driven by Brownian motion and a compound
//! Poisson random measure.
//!
//! A model is a [`ModelSpec`]; paths are produced by [`simulate`], the
//! exponential by [`exponential`], analytic sufficient conditions by
//! [`conditions`], the measure change by [`measure_change`] and Monte Carlo
//! diagnostics by [`diagnostics`]. [`catalog`] holds the reference models and
//! [`report`] assembles the JSON report used by the command-line tool.

pub mod catalog;
pub mod conditions;
pub mod diagnostics;
pub mod error;
pub mod exponential;
pub mod measure_change;
pub mod model;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    validate_model, Boundary, CoefficientSet, Dependence, HistoryView, LevyMeasure, ModelSpec, Singularity,
    ValidationConfig, VolterraKernel,
};
pub use simulate::{apply_stopping, simulate_ensemble, EnsembleConfig, PathBundle, Simulator, StoppingRule, StoppingVariant, TimeGrid};
