//! Particle Gibbs, with or without backward sampling.

use nalgebra::DVector;
use rand::RngCore;

use super::conjugate::conjugate_update_theta;
use super::pmmh::ChainState;
use super::prior::PriorSpec;
use crate::backward::backward_sample;
use crate::cdpf::conditional_dpf_run_bound;
use crate::dpf::sample_path;
use crate::error::{invalid, Result};
use crate::kalman::ffbs_continuous;
use crate::model::ModelSpec;

/// One particle Gibbs iteration.
///
/// With non-empty `priors`, `θ` is first redrawn from its conjugate full
/// conditional given the current path (and, if the rule needs it, a continuous
/// state drawn by forward filtering backward sampling). A conditional particle
/// filter run on the current path then yields the new path, either by backward
/// sampling or by a single draw from `{W_T}`. With empty `priors`, `θ` stays fixed.
pub fn pg_step<R: RngCore + ?Sized>(
    state: ChainState,
    model: &ModelSpec,
    priors: &PriorSpec,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
    use_backward: bool,
) -> Result<ChainState> {
    if n_particles < 2 {
        return invalid(format!("particle Gibbs needs N >= 2, got {n_particles}"));
    }
    let ChainState { mut theta, path, iteration, .. } = state;
    if !priors.is_empty() {
        let needs_z = model.conjugate_rule().is_some_and(|r| r.needs_continuous_state());
        let z = if needs_z { Some(ffbs_continuous(model, &theta, &path, y, rng)?) } else { None };
        theta = conjugate_update_theta(model, priors, &theta, &path, z.as_deref(), y, &mut &mut *rng)?;
    }
    let bound = model.bind(&theta)?;
    let run = conditional_dpf_run_bound(&bound, y, n_particles, &path, rng)?;
    let new_path = if use_backward {
        backward_sample(&run.output, &bound, y, rng)?
    } else {
        sample_path(&run.output, rng)
    };
    Ok(ChainState { theta, path: new_path, log_evidence: None, iteration: iteration + 1 })
}

