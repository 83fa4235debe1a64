//! MCMC samplers over the static parameter and the discrete path.

pub mod conjugate;
pub mod gerlach;
pub mod pg;
pub mod pmmh;
pub mod prior;
pub mod proposal;

pub use gerlach::{gerlach_gibbs_sweep, gerlach_step, GibbsSweep};
pub use pg::pg_step;
pub use pmmh::{pmmh_init, pmmh_step, ChainState, PmmhOutcome};
