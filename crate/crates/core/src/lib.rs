//! Optimal spending of a discrete resource stock at Poisson-arriving
//! opportunities before a deadline.
//!
//! * [`utility`]: separable utilities `u(θ, x) = ζ(θ)·μ(x)`.
//! * [`value_solver`]: the value function `V(t, x)` and its checks.
//! * [`policy`]: saving rules, cutoff curves and misperceiving agents.
//! * [`simulator`]: Monte Carlo paths and correlated payments.
//! * [`analysis`]: numerical verification of the model's structural claims.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod policy;
pub mod simulator;
pub mod utility;
pub mod value_solver;

pub use error::{Error, Result};
pub use utility::{MuFamily, UtilitySpec, ZetaFamily};
pub use value_solver::{ModelParams, ValueGrid};
