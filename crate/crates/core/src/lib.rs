//! Estimation of interventional direct and indirect effects, and their
//! transported counterparts, with multivariate mediators and intermediate
//! confounders.
//!
//! The pipeline is: fold assignment ([`crossfit`]), density ratios by
//! classification on a duplicated dataset ([`density_ratio`]), cross-fitted
//! nuisance regressions ([`nuisance`]), and efficient-influence-function based
//! one-step and partial TMLE estimators ([`estimators`]). [`simulation`]
//! provides the reference data-generating mechanisms and exact oracles.

pub mod error;
pub mod data;
pub mod learners;
pub mod crossfit;
pub mod density_ratio;
pub mod nuisance;
pub mod estimators;
pub mod simulation;
pub mod cli;

pub use error::{Error, Result};
