//! Forecast training with a joint-distribution (Bures–Wasserstein) loss,
//! plus the exact transport oracles, bias diagnostics and synthetic data
//! used to check it.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod discrepancy;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod output;
pub mod train;

pub use error::{Error, Result};
