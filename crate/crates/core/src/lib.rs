//! Adaptive tracking of historical volatility.

pub mod cli;
pub mod error;
pub mod eval;
pub mod filters;
pub mod gains;
pub mod simulate;
pub mod tuning;

pub use error::{Error, Result};
