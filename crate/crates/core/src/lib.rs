//! Discrete particle filtering and discrete particle MCMC for switching
//! linear-Gaussian state-space models.
//!
//! The continuous state is integrated out with the Kalman filter, leaving a
//! finite-state path that the discrete particle filter ([`dpf`]) explores without
//! duplicating particles. On top of it sit particle marginal Metropolis-Hastings
//! and particle Gibbs with backward sampling ([`samplers`]), plus an exhaustive
//! enumeration [`oracle`] for checking all of them on small instances.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backward;
pub mod cdpf;
pub mod dpf;
pub mod error;
pub mod kalman;
pub mod math;
pub mod model;
pub mod oracle;
pub mod samplers;

pub use error::{Error, Result};
