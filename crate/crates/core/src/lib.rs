//! Exact fairness audits and long-run selection dynamics over discrete
//! score populations.
//!
//! - [`population`]: score grids and per-group score distributions
//! - [`policy`]: per-bin acceptance policies, randomized thresholds, institution utility
//! - [`metrics`]: demographic parity, equal opportunity, equalized odds,
//!   individual fairness and unawareness, computed exactly
//! - [`causal`]: finite causal networks, do-interventions, d-separation and
//!   path-based discrimination checks
//! - [`dynamics`]: the one-step feedback model, multi-step simulation,
//!   stationarity and a Monte Carlo cross-check
//! - [`optimize`]: unconstrained, fairness-constrained and outcome-optimal policies
//! - [`scenarios`]: scenario files, interventions, variant comparison and sensitivity sweeps

pub mod causal;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod optimize;
pub mod policy;
pub mod population;
pub mod report;
pub mod scenarios;

pub use error::{Error, Result};
