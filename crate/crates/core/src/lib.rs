//! Optimal portfolio choice under piecewise SAHARA utilities.

pub mod backtest;
pub mod envelope;
pub mod error;
pub mod market;
pub mod montecarlo;
pub mod normal;
pub mod policy;
pub mod presets;
pub mod utility;
pub mod volatility;

pub use error::{PsaharaError, Result};
