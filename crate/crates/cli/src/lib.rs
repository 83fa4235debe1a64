//! Configuration, data handling, chain execution and diagnostics behind the
//! `dpmcmc` command.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod run;
