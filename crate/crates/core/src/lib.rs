//! Synthetic categorical data generation from declared safe marginal
//! statistics, and a black-box auditor that detects generators leaking
//! statistics outside the declared set.

pub mod audit;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod extremal;
pub mod generators;
pub mod seed;
pub mod space;
pub mod utility;

pub use error::{Error, Result};

/// Version string embedded in every card and report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
