//! Validation-driven adaptive pooling for multivariate time-series forecasting.
//!
//! A pooled GLOBAL forecaster is trained on every series, cluster prototypes
//! are warm-started from it, series are reassigned to the prototype with the
//! lowest out-of-sample (VAL) loss, and clusters whose prototype does not beat
//! GLOBAL on VAL are routed back to GLOBAL. The number of clusters is chosen by
//! a penalized VAL criterion and TEST is touched exactly once.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, which the pipeline uses by default.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod calibration;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MtsDataset = dataset::Dataset<f64>;
pub type Standardizer = dataset::Standardizer<f64>;
pub type ParamSet = model::Params<f64>;
pub type ParamSet32 = model::Params<f32>;
pub type QuantilePrediction = model::QuantilePrediction<f64>;
pub type Forecast = model::Forecast<f64>;
pub type CostMatrix = clustering::CostMatrix<f64>;
pub type CalibrationTable = calibration::CalibrationTable;
