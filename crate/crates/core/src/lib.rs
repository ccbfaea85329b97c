//! Design-based survey estimation toolkit.
//!
//! The crate covers the pipeline from finite populations and sampling
//! designs through design-weighted regression (plain and penalized),
//! approximate posterior sampling for the population mean under flat and
//! shrinkage priors, nonlinear (logistic) model-assisted estimation, and a
//! Monte Carlo harness that measures RMSE, bias, coverage, and interval
//! length over replicated designs.
//!
//! Everything is deterministic given explicit seeds; replications can run
//! in parallel without changing any result.

pub mod bayes;
pub mod error;
pub mod glm;
pub mod harness;
pub mod regfit;
pub mod survey;

pub use error::SvyError;

pub type Result<T> = std::result::Result<T, SvyError>;
