//! Class-wise robustness disparity on Gaussian mixtures: closed-form errors,
//! Monte-Carlo oracles, adversarial attacks and fair robust training.

pub mod analytic;
pub mod analytic_tables;
pub mod attacks;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod rng;
pub mod training;

pub use analytic::*;
pub use analytic_tables::*;
pub use attacks::*;
pub use distributions::*;
pub use error::{Error, Result};
pub use evaluation::*;
pub use models::*;
pub use training::*;
