//! Conditional discrete particle filter: a run in which a reference path is
//! guaranteed to survive every resampling step.
//!
//! Whenever the reference prefix would be kept deterministically the ordinary
//! stratified resampler is used; otherwise the stratified grid is anchored at a
//! uniform point inside the reference particle's interval.

use nalgebra::DVector;
use rand::Rng;

use crate::dpf::{run_filter, DpfOutput};
use crate::error::Result;
use crate::model::{BoundModel, ModelSpec, Theta};

pub use crate::dpf::conditional_stratified_resample;

/// Output of a conditional run; beliefs are always stored for backward sampling.
#[derive(Clone, Debug)]
pub struct ConditionedRun {
    pub output: DpfOutput,
    pub conditioned_path: Vec<usize>,
    /// Index of the reference prefix `x*_{1:n}` in the system at time `n`.
    pub reference_indices: Vec<usize>,
}

pub fn conditional_dpf_run<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &Theta,
    y: &[DVector<f64>],
    n_particles: usize,
    reference: &[usize],
    rng: &mut R,
) -> Result<ConditionedRun> {
    conditional_dpf_run_bound(&model.bind(theta)?, y, n_particles, reference, rng)
}

pub fn conditional_dpf_run_bound<R: Rng + ?Sized>(
    model: &BoundModel<'_>,
    y: &[DVector<f64>],
    n_particles: usize,
    reference: &[usize],
    rng: &mut R,
) -> Result<ConditionedRun> {
    let (output, reference_indices) = run_filter(model, y, n_particles, rng, true, Some(reference))?;
    Ok(ConditionedRun { output, conditioned_path: reference.to_vec(), reference_indices })
}
