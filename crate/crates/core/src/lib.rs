//! Coarse inverse propensity weighting (CIPW) for average treatment effect
//! estimation under inaccurate propensity scores.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod partition_finder;
pub mod rng;
pub mod synth;

pub use error::{CipwError, Result};
