//! Single-site Gibbs sampling of the discrete path with the continuous state
//! integrated out.
//!
//! A backward pass along the current path stores the potentials `(Ξ_n, μ_n)`;
//! a forward pass then visits `n = 1..T`, scores every candidate `x_n` by its
//! one-step predictive density, its prior weight given both neighbours, and the
//! backward likelihood of the rest of the data, and advances the Kalman filter
//! with the sampled value. One sweep costs `O(T)` filter and backward steps.

use nalgebra::DVector;
use rand::{Rng, RngCore};

use super::conjugate::conjugate_update_theta;
use super::pmmh::ChainState;
use super::prior::PriorSpec;
use crate::backward::{backward_loglik, backward_potential_step, BackwardPotential};
use crate::error::{invalid, Error, Result};
use crate::kalman::{ffbs_continuous, kalman_step, GaussianBelief};
use crate::math::{categorical_index, normalize_log_weights};
use crate::model::{BoundModel, ModelSpec, Theta, TransitionLaw};

/// A new path together with the normalized full conditional used at every site.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsSweep {
    pub path: Vec<usize>,
    /// `p_θ(x_n = x | y_{1:T}, x_{-n})` indexed `[n - 1][x]`, where `x_{-n}` holds
    /// the already-updated sites before `n` and the old sites after it.
    pub conditionals: Vec<Vec<f64>>,
}

pub fn gerlach_gibbs_sweep<R: Rng + ?Sized>(
    path: &[usize],
    model: &ModelSpec,
    theta: &Theta,
    y: &[DVector<f64>],
    rng: &mut R,
) -> Result<GibbsSweep> {
    gerlach_gibbs_sweep_bound(path, &model.bind(theta)?, y, rng)
}

pub fn gerlach_gibbs_sweep_bound<R: Rng + ?Sized>(
    path: &[usize],
    model: &BoundModel<'_>,
    y: &[DVector<f64>],
    rng: &mut R,
) -> Result<GibbsSweep> {
    let t = path.len();
    if t == 0 || y.len() != t {
        return invalid("path and observations must be non-empty and of equal length");
    }
    model.check_path(path)?;
    model.require_scalar_observations("single-site Gibbs sampling")?;
    let k = model.num_states();

    // potentials[n - 1] summarises y_{n+1:T} under the current x_{n+1:T}.
    let mut potentials = vec![BackwardPotential::terminal(model.state_dim()); t];
    for n in (1..t).rev() {
        potentials[n - 1] = backward_potential_step(model, &potentials[n], path[n], y[n][0], model.input(n + 1))?;
    }

    let mut new_path = path.to_vec();
    let mut belief = GaussianBelief::initial(model.spec());
    let mut conditionals = Vec::with_capacity(t);
    let mut log_w = vec![0.0; k];
    let mut weights = Vec::with_capacity(k);
    let mut candidates: Vec<Option<GaussianBelief>> = vec![None; k];
    for n in 1..=t {
        let prior = site_log_prior(model, &new_path, n - 1);
        for c in 0..k {
            candidates[c] = None;
            if prior[c] == f64::NEG_INFINITY {
                log_w[c] = f64::NEG_INFINITY;
                continue;
            }
            let (b, stats) = kalman_step(model, &belief, c, &y[n - 1], model.input(n))?;
            log_w[c] = prior[c] + stats.loglik + backward_loglik(&potentials[n - 1], &b)?;
            candidates[c] = Some(b);
        }
        let lse = normalize_log_weights(&log_w, &mut weights);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!("site {n}: every state has zero conditional probability")));
        }
        let x = categorical_index(&weights, rng.random())
            .ok_or_else(|| Error::Numerical(format!("site {n}: invalid conditional")))?;
        new_path[n - 1] = x;
        belief = candidates[x].take().expect("sampled state has a belief");
        conditionals.push(weights.clone());
    }
    Ok(GibbsSweep { path: new_path, conditionals })
}

/// `log p_θ(x_{1:T})` with site `i` (0-based) set to each state, up to a term
/// common to all states.
fn site_log_prior(model: &BoundModel<'_>, path: &[usize], i: usize) -> Vec<f64> {
    let k = model.num_states();
    match model.law() {
        TransitionLaw::Markov { log_p } => (0..k)
            .map(|c| {
                let left = if i == 0 { model.log_initial()[c] } else { log_p[(path[i - 1], c)] };
                let right = if i + 1 < path.len() { log_p[(c, path[i + 1])] } else { 0.0 };
                left + right
            })
            .collect(),
        _ => {
            let mut p = path.to_vec();
            (0..k)
                .map(|c| {
                    p[i] = c;
                    model.log_path_prior(&p)
                })
                .collect()
        }
    }
}

/// One iteration of the Gibbs baseline: a conjugate `θ` update (skipped when
/// `priors` is empty) followed by a single-site sweep of the path.
pub fn gerlach_step<R: RngCore + ?Sized>(
    state: ChainState,
    model: &ModelSpec,
    priors: &PriorSpec,
    y: &[DVector<f64>],
    rng: &mut R,
) -> Result<ChainState> {
    let ChainState { mut theta, path, iteration, .. } = state;
    if !priors.is_empty() {
        let needs_z = model.conjugate_rule().is_some_and(|r| r.needs_continuous_state());
        let z = if needs_z { Some(ffbs_continuous(model, &theta, &path, y, rng)?) } else { None };
        theta = conjugate_update_theta(model, priors, &theta, &path, z.as_deref(), y, &mut &mut *rng)?;
    }
    let sweep = gerlach_gibbs_sweep(&path, model, &theta, y, rng)?;
    Ok(ChainState { theta, path: sweep.path, log_evidence: None, iteration: iteration + 1 })
}
