//! Household-level demand forecasting with multiscale cascades of dynamic
//! generalized linear models.
//!
//! The crate is organized bottom-up:
//!
//! * [`dglm`]: state evolution, conjugate moment matching and linear Bayes updates.
//! * [`distribution`]: predictive laws (Beta-Bernoulli, negative binomial, Student-t,
//!   truncated log-T, zero-inflated and finite mixtures).
//! * [`mixture`]: zero-inflated count (DCMM) and spend (DLMM) models.
//! * [`cascade`]: the per-household model hierarchy and its conditioning rules.
//! * [`metrics`]: loss-optimal point forecasts and evaluation summaries.
//! * [`data`]: weekly records, CSV ingest, customer categorization and the
//!   synthetic generator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Node loops index
// several parallel per-node arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cascade;
pub mod config;
pub mod data;
pub mod dglm;
pub mod distribution;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod metrics;
pub mod mixture;
pub mod special;
mod student;

pub use distribution::ForecastDistribution;
pub use error::{Error, Result};
pub use hierarchy::HierarchySpec;
