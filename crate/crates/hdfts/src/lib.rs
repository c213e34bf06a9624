//! Forecasting for panels of curve-valued time series (for example annual
//! log10 mortality-rate curves indexed by state and gender).
//!
//! The pipeline decomposes a [`fda::CurvePanel`] into deterministic grand /
//! row / column effect curves plus a time-varying residual process (by
//! functional median polish or by means), models the residuals with dynamic
//! functional principal components built on the long-run covariance, and
//! produces point forecasts and sieve-bootstrap prediction intervals. A
//! rolling- or expanding-window harness scores everything out of sample.

pub mod anova;
pub mod dfpca;
pub mod error;
pub mod evalharness;
pub mod fda;
pub mod forecast;
pub mod ingest;
pub mod longrun;
pub mod rng;
pub mod sieve;
pub mod synthgen;

pub use error::{Error, Result};
pub use fda::{inner_product, pointwise_mean, pointwise_median, AgeGrid, Curve, CurvePanel};
