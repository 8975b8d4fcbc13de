//! Stochastic gradient descent for linear systems with missing data.
//!
//! Given a linear system `Ax = b` where each entry of `A` is observed
//! independently with probability `p` (and is otherwise missing), this crate
//! implements an unbiased SGD variant that works directly on the masked rows,
//! together with the constants and convergence bounds that govern it,
//! imputation baselines, and a reproducible experiment harness.
//!
//! Module layout:
//! - [`linalg`]: dense matrices/vectors and the small factorizations needed.
//! - [`masking`]: Bernoulli masks, masked rows, and exhaustive enumeration.
//! - [`solver`]: the masked-gradient update, step schedules, projection, and
//!   the iteration driver.
//! - [`bounds`]: strong-convexity / smoothness / variance constants and the
//!   convergence bounds and step-size plans built from them.
//! - [`oracle`]: slow, exact expectation and Monte Carlo reference
//!   computations used to validate the fast paths.
//! - [`experiments`]: problem generators, multi-trial aggregation, and the
//!   imputation comparison.
//! - [`io`]: CSV matrix/trace formats and sidecar metadata.
//! - [`config`]: the experiment configuration schema and its resolution.

pub mod bounds;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod masking;
pub mod oracle;
pub mod solver;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
