//! Over-parametrized logistic network regression.

pub mod construct;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod network;
pub mod sigmoid;
pub mod taylor;
pub mod training;

pub use error::{Error, Result};
