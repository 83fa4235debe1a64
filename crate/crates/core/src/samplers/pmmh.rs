//! Particle marginal Metropolis-Hastings over `(θ, x_{1:T})`.

use nalgebra::DVector;
use rand::Rng;

use super::prior::PriorSpec;
use super::proposal::{Block, ProposalSpec};
use crate::dpf::{dpf_run_bound, sample_path};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, Theta};

/// Current state of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: Theta,
    pub path: Vec<usize>,
    /// Cached `log p̂_θ(y_{1:T})`; PMMH only.
    pub log_evidence: Option<f64>,
    pub iteration: u64,
}

/// Result of one PMMH iteration: the new state and, per block, whether the
/// proposal was accepted.
#[derive(Clone, Debug, PartialEq)]
pub struct PmmhOutcome {
    pub state: ChainState,
    pub accepted: Vec<bool>,
}

/// `min(1, exp(log_alpha))`, with `NaN` treated as a rejection.
pub fn acceptance_probability(log_alpha: f64) -> f64 {
    if log_alpha.is_nan() {
        0.0
    } else {
        log_alpha.min(0.0).exp()
    }
}

/// `log` of the Metropolis-Hastings ratio for a particle proposal.
pub fn log_acceptance_ratio(
    log_evidence_new: f64,
    log_prior_new: f64,
    log_evidence_old: f64,
    log_prior_old: f64,
    log_q_ratio: f64,
) -> f64 {
    let r = (log_evidence_new + log_prior_new) - (log_evidence_old + log_prior_old) + log_q_ratio;
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// Starts a PMMH chain at `theta`: one particle filter run gives the cached
/// evidence and a path drawn from `{W_T}`.
pub fn pmmh_init<R: Rng + ?Sized>(
    model: &ModelSpec,
    priors: &PriorSpec,
    theta: Theta,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
) -> Result<ChainState> {
    if priors.log_density(&theta)? == f64::NEG_INFINITY {
        return invalid("initial parameter value lies outside the prior support");
    }
    let bound = model.bind(&theta)?;
    let run = dpf_run_bound(&bound, y, n_particles, rng, false)?;
    if !run.log_evidence.is_finite() {
        return Err(Error::DegenerateFilter { time: y.len() });
    }
    let path = sample_path(&run, rng);
    let log_evidence = Some(run.log_evidence);
    Ok(ChainState { theta, path, log_evidence, iteration: 0 })
}

/// One PMMH iteration: every block of `proposal` is tried once, in order.
///
/// Proposals outside the prior support or violating a model constraint are
/// rejected without running the filter; a filter that loses all its weight also
/// counts as a rejection. Rejections leave `(θ, path, log_evidence)` untouched.
pub fn pmmh_step<R: Rng + ?Sized>(
    state: ChainState,
    model: &ModelSpec,
    priors: &PriorSpec,
    proposal: &ProposalSpec,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
) -> Result<PmmhOutcome> {
    let Some(le) = state.log_evidence else {
        return invalid("PMMH state has no cached log evidence");
    };
    if !le.is_finite() {
        return invalid(format!("PMMH state has non-finite log evidence {le}"));
    }
    let mut state = state;
    let mut accepted = Vec::with_capacity(proposal.blocks.len());
    for block in &proposal.blocks {
        let (next, acc) = pmmh_block(state, model, priors, block, y, n_particles, rng)?;
        state = next;
        accepted.push(acc);
    }
    state.iteration += 1;
    Ok(PmmhOutcome { state, accepted })
}

fn pmmh_block<R: Rng + ?Sized>(
    state: ChainState,
    model: &ModelSpec,
    priors: &PriorSpec,
    block: &Block,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
) -> Result<(ChainState, bool)> {
    let (candidate, log_q_ratio) = block.propose(&state.theta, rng)?;
    let log_prior_new = priors.log_density(&candidate)?;
    if log_prior_new == f64::NEG_INFINITY || model.check_theta(&candidate).is_err() {
        return Ok((state, false));
    }
    let bound = model.bind(&candidate)?;
    let run = match dpf_run_bound(&bound, y, n_particles, rng, false) {
        Ok(run) => run,
        Err(Error::DegenerateFilter { .. }) => return Ok((state, false)),
        Err(e) => return Err(e),
    };
    if !run.log_evidence.is_finite() {
        return Ok((state, false));
    }
    let path = sample_path(&run, rng);
    let log_prior_old = priors.log_density(&state.theta)?;
    let old_le = state.log_evidence.expect("checked by caller");
    let log_alpha = log_acceptance_ratio(run.log_evidence, log_prior_new, old_le, log_prior_old, log_q_ratio);
    let u: f64 = rng.random();
    if u.ln() < log_alpha {
        let next = ChainState {
            theta: candidate,
            path,
            log_evidence: Some(run.log_evidence),
            iteration: state.iteration,
        };
        Ok((next, true))
    } else {
        Ok((state, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceptance_of_doubled_and_halved_evidence() {
        let up = log_acceptance_ratio(2.0_f64.ln(), 0.0, 0.0, 0.0, 0.0);
        assert_eq!(acceptance_probability(up), 1.0);
        let down = log_acceptance_ratio(0.5_f64.ln(), 0.0, 0.0, 0.0, 0.0);
        assert!((acceptance_probability(down) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn probability_stays_in_unit_interval() {
        for r in [f64::NEG_INFINITY, -1e300, -3.0, 0.0, 5.0, f64::INFINITY, f64::NAN] {
            let p = acceptance_probability(r);
            assert!((0.0..=1.0).contains(&p), "{r} -> {p}");
        }
    }
}
