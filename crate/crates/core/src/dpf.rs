//! The discrete particle filter.
//!
//! At every step each surviving path is extended by all `|X|` states, so no two
//! particles ever share a path. When there are more than `N` candidates, `N` of
//! them are kept: those with weight above `1/C` deterministically, the rest by
//! stratified resampling on the residual weights, where `C` solves
//! `Σ min(1, C W) = N`. Survivors are reweighted so that the estimate of the
//! marginal likelihood stays unbiased.
//!
//! Particles are stored as a genealogy (parent index and state per time step),
//! kept in lexicographic path order by construction.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::kalman::{step, GaussianBelief};
use crate::math::{categorical_index, compensated_cumsum, log_sum_exp};
use crate::model::{BoundModel, ModelSpec, PathStats, Theta};

/// Resampling threshold `C`, or the keep-all regime in which no particle is dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    KeepAll,
    Finite(f64),
}

impl Threshold {
    /// `log(1 ∧ C w)` for a particle with normalized weight `w > 0`.
    pub fn log_survival(&self, w: f64) -> f64 {
        match *self {
            Self::KeepAll => 0.0,
            Self::Finite(c) => (c * w).min(1.0).ln(),
        }
    }
}

/// Support set `S_n` with its weights.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    /// One-based time index.
    pub time: usize,
    pub states: Vec<usize>,
    /// Index of each particle's parent in the system at `time - 1` (0 at time 1).
    pub parents: Vec<usize>,
    /// `log w̄_n`.
    pub log_weights: Vec<f64>,
    /// Normalized weights `W_n`.
    pub weights: Vec<f64>,
    /// Filtered beliefs; kept for every time only when requested.
    pub beliefs: Vec<GaussianBelief>,
    /// Transition-law statistics of each path; kept alongside the beliefs.
    pub stats: Vec<PathStats>,
    /// Threshold used when this system was resampled (`None` at the final time).
    pub threshold: Option<Threshold>,
    /// Number of particles kept deterministically at that resampling.
    pub num_maintained: usize,
}

impl ParticleSystem {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn has_stored_beliefs(&self) -> bool {
        self.beliefs.len() == self.states.len()
    }
}

/// Every particle system of a run and the log marginal-likelihood estimate.
#[derive(Clone, Debug)]
pub struct DpfOutput {
    pub systems: Vec<ParticleSystem>,
    /// `log p̂_θ(y_{1:T})`.
    pub log_evidence: f64,
    /// `log p̂_θ(y_n | y_{1:n-1})` for `n = 1..T`.
    pub log_evidence_increments: Vec<f64>,
    pub num_particles: usize,
}

impl DpfOutput {
    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    /// System at one-based time `n`.
    pub fn system(&self, n: usize) -> &ParticleSystem {
        &self.systems[n - 1]
    }

    /// Path `x_{1:n}` of particle `i` at one-based time `n`.
    pub fn path(&self, n: usize, i: usize) -> Vec<usize> {
        let mut path = vec![0; n];
        let mut idx = i;
        for t in (1..=n).rev() {
            let sys = &self.systems[t - 1];
            path[t - 1] = sys.states[idx];
            idx = sys.parents[idx];
        }
        path
    }

    /// All paths at time `n`, in particle order.
    pub fn paths(&self, n: usize) -> Vec<Vec<usize>> {
        (0..self.system(n).len()).map(|i| self.path(n, i)).collect()
    }

    pub fn stores_beliefs(&self) -> bool {
        self.systems.iter().all(ParticleSystem::has_stored_beliefs)
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Solves `Σ min(1, C w_i) = N` for `C`, returning it with `L = #{w_i > 1/C}`.
///
/// When at most `N` weights are positive every particle can be kept and the
/// keep-all threshold is returned.
pub fn solve_threshold(weights: &[f64], n: usize) -> Result<(Threshold, usize)> {
    if n == 0 {
        return invalid("number of particles must be at least 1");
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return invalid("weights must be finite and non-negative");
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateFilter { time: 0 });
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return invalid(format!("weights sum to {total}, not 1"));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if weights.len() <= n || positive <= n {
        return Ok((Threshold::KeepAll, positive));
    }

    let mut sorted: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    // tail[k] = mass outside the k largest weights.
    let mut rev = sorted.clone();
    rev.reverse();
    let mut tail = compensated_cumsum(&rev);
    tail.reverse();

    let mut c = (1.0) / tail[n - 1];
    for k in 0..n {
        let ck = (n - k) as f64 / tail[k];
        if sorted[k] * ck <= 1.0 {
            c = ck;
            break;
        }
    }
    let maintained = weights.iter().filter(|&&w| w * c > 1.0).count();
    Ok((Threshold::Finite(c), maintained))
}

fn cumulative(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return invalid("resampling weights must be finite and non-negative");
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return invalid("resampling weights are all zero");
    }
    let mut q = compensated_cumsum(weights);
    for v in q.iter_mut() {
        *v /= total;
    }
    *q.last_mut().unwrap() = 1.0;
    Ok(q)
}

fn check_survivors(weights: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return invalid("number of survivors must be at least 1");
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if k > positive {
        return invalid(format!("{k} survivors requested from {positive} particles with positive weight"));
    }
    let total: f64 = weights.iter().sum();
    let max = weights.iter().copied().fold(0.0, f64::max) / total;
    if max * k as f64 > 1.0 + 1e-9 {
        return invalid(format!(
            "a weight of {max} exceeds 1/{k}: stratified resampling could select it twice"
        ));
    }
    Ok(())
}

/// Indices `i` such that some grid point `U_j = U_1 + (j-1)/K` lies in `(Q(i-1), Q(i)]`.
///
/// `fixed = (j, i)` forces grid point `j` onto index `i`; the caller guarantees
/// that `U_j` lies in that interval, which rounding in `Q` can hide when the
/// interval is very short.
fn grid_select(q: &[f64], u1: f64, k: usize, fixed: Option<(usize, usize)>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(k);
    let mut i = 0;
    let last = q.len() - 1;
    for j in 0..k {
        match fixed {
            Some((js, is)) if js == j => i = i.max(is),
            _ => {
                let u = u1 + j as f64 / k as f64;
                while i < last && q[i] < u {
                    i += 1;
                }
            }
        }
        if out.last() != Some(&i) {
            out.push(i);
        }
    }
    out
}

/// Stratified resampling of `k` distinct survivors from weights given in path order.
///
/// Weights need not be normalized. Every normalized weight must be at most `1/k`,
/// which holds for residual weights produced by [`solve_threshold`].
pub fn stratified_resample<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_survivors(weights, k)?;
    let q = cumulative(weights)?;
    let u: f64 = rng.random();
    let u1 = (1.0 - u) / k as f64;
    Ok(grid_select(&q, u1, k, None))
}

/// Stratified resampling constrained so that index `kappa` survives.
///
/// `U_*` is drawn uniformly on `(Q(κ-1), Q(κ)]` and the grid is shifted so that it
/// passes through `U_*`.
pub fn conditional_stratified_resample<R: Rng + ?Sized>(
    weights: &[f64],
    kappa: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if kappa >= weights.len() {
        return invalid(format!("reference index {kappa} out of range"));
    }
    if !(weights[kappa] > 0.0) {
        return invalid("reference particle has zero weight and cannot be conditioned on");
    }
    check_survivors(weights, k)?;
    let q = cumulative(weights)?;
    let lo = if kappa == 0 { 0.0 } else { q[kappa - 1] };
    let hi = q[kappa];
    let u: f64 = rng.random();
    let u_star = (hi - u * (hi - lo)).max(f64::MIN_POSITIVE);
    let kf = k as f64;
    let mut j_star = ((kf * u_star).floor() as usize).min(k);
    let mut u1 = u_star - j_star as f64 / kf;
    if u1 <= 0.0 {
        j_star -= 1;
        u1 += 1.0 / kf;
    }
    let out = grid_select(&q, u1, k, Some((j_star, kappa)));
    debug_assert!(out.contains(&kappa));
    Ok(out)
}

/// Survivors of a resampling step, with `log(W / (1 ∧ C W))` for each.
struct Selection {
    indices: Vec<usize>,
    log_corrections: Vec<f64>,
    threshold: Threshold,
    num_maintained: usize,
    /// Position of the reference particle among the survivors.
    reference: Option<usize>,
}

/// One full resampling step on normalized weights: particles with `C w > 1` are
/// kept, the remaining slots are filled by stratified resampling. Returns the
/// surviving indices in increasing order together with the threshold used.
pub fn optimal_resample<R: Rng + ?Sized>(
    weights: &[f64],
    n_particles: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Threshold)> {
    let sel = select(weights, None, 0, n_particles, None, rng)?;
    Ok((sel.indices, sel.threshold))
}

/// `log_w`, when given, holds `ln w` computed in the log domain; it is used for
/// the corrections of kept particles and to keep a reference particle whose
/// weight underflows to zero eligible for selection.
fn select<R: Rng + ?Sized>(
    w: &[f64],
    log_w: Option<&[f64]>,
    time: usize,
    n_particles: usize,
    reference: Option<usize>,
    rng: &mut R,
) -> Result<Selection> {
    let floored;
    let w = match reference {
        Some(r) if w[r] == 0.0 && log_w.is_some_and(|l| l[r].is_finite()) => {
            floored = {
                let mut v = w.to_vec();
                v[r] = f64::MIN_POSITIVE;
                v
            };
            &floored[..]
        }
        _ => w,
    };
    let ln_w = |i: usize| log_w.map_or_else(|| w[i].ln(), |l| l[i]);
    let (threshold, maintained) = solve_threshold(w, n_particles).map_err(|e| match e {
        Error::DegenerateFilter { .. } => Error::DegenerateFilter { time },
        other => other,
    })?;
    let mut keep = vec![false; w.len()];
    let mut corrections = vec![0.0; w.len()];
    match threshold {
        Threshold::KeepAll => {
            for (i, &wi) in w.iter().enumerate() {
                if wi > 0.0 {
                    keep[i] = true;
                    corrections[i] = ln_w(i);
                }
            }
        }
        Threshold::Finite(c) => {
            let mut residual = Vec::new();
            for (i, &wi) in w.iter().enumerate() {
                if wi * c > 1.0 {
                    keep[i] = true;
                    corrections[i] = ln_w(i);
                } else if wi > 0.0 {
                    residual.push(i);
                }
            }
            let k = n_particles - maintained;
            let rw: Vec<f64> = residual.iter().map(|&i| w[i]).collect();
            let chosen = match reference.and_then(|r| residual.iter().position(|&i| i == r)) {
                Some(kappa) => conditional_stratified_resample(&rw, kappa, k, rng)?,
                None => stratified_resample(&rw, k, rng)?,
            };
            let log_inv_c = -c.ln();
            for j in chosen {
                keep[residual[j]] = true;
                corrections[residual[j]] = log_inv_c;
            }
        }
    }
    let mut indices = Vec::with_capacity(n_particles);
    let mut log_corrections = Vec::with_capacity(n_particles);
    let mut ref_pos = None;
    for (i, &kept) in keep.iter().enumerate() {
        if kept {
            if Some(i) == reference {
                ref_pos = Some(indices.len());
            }
            indices.push(i);
            log_corrections.push(corrections[i]);
        }
    }
    Ok(Selection { indices, log_corrections, threshold, num_maintained: maintained, reference: ref_pos })
}

fn normalize(sys: &mut ParticleSystem) -> Result<f64> {
    let lse = log_sum_exp(&sys.log_weights);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return Err(Error::DegenerateFilter { time: sys.time });
    }
    sys.weights = sys.log_weights.iter().map(|&lw| (lw - lse).exp()).collect();
    Ok(lse)
}

fn at_time(e: Error, n: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("time {n}: {msg}")),
        other => other,
    }
}

/// Shared implementation of the unconditional and conditional filters.
///
/// With a reference path, returns the index of its prefix in every system.
pub(crate) fn run_filter<R: Rng + ?Sized>(
    model: &BoundModel<'_>,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
    store: bool,
    reference: Option<&[usize]>,
) -> Result<(DpfOutput, Vec<usize>)> {
    if n_particles == 0 {
        return invalid("number of particles must be at least 1");
    }
    if y.is_empty() {
        return invalid("empty data record");
    }
    if let Some(r) = reference {
        if r.len() != y.len() {
            return invalid("reference path and data have different lengths");
        }
        model.check_path(r)?;
    }
    if let Some(bad) = y.iter().position(|v| v.len() != model.obs_dim()) {
        return invalid(format!("observation {} has the wrong dimension", bad + 1));
    }
    let k = model.num_states();
    let law = model.law();
    let t_max = y.len();
    let mut systems: Vec<ParticleSystem> = Vec::with_capacity(t_max);
    let mut increments = Vec::with_capacity(t_max);
    let mut kappas = Vec::new();

    // Time 1: S_1 = X.
    let init = GaussianBelief::initial(model.spec());
    let u1 = model.input(1);
    let mut sys = ParticleSystem {
        time: 1,
        states: (0..k).collect(),
        parents: vec![0; k],
        log_weights: Vec::with_capacity(k),
        weights: Vec::new(),
        beliefs: Vec::with_capacity(k),
        stats: Vec::with_capacity(k),
        threshold: None,
        num_maintained: 0,
    };
    for x in 0..k {
        let s = model.system(x);
        let (b, ll) = step(s, &init, &y[0], u1).map_err(|e| at_time(e, 1))?;
        sys.log_weights.push(model.log_initial()[x] + ll);
        sys.beliefs.push(b);
        sys.stats.push(law.initial_stats(x));
    }
    increments.push(normalize(&mut sys)?);
    if let Some(r) = reference {
        if sys.log_weights[r[0]] == f64::NEG_INFINITY {
            return Err(Error::ConditioningImpossible { time: 1 });
        }
        kappas.push(r[0]);
    }
    systems.push(sys);

    for n in 2..=t_max {
        let prev = systems.last_mut().unwrap();
        let lse = increments[n - 2];
        let log_w: Vec<f64> = prev.log_weights.iter().map(|l| l - lse).collect();
        let sel = select(&prev.weights, Some(&log_w), prev.time, n_particles, kappas.last().copied(), rng)?;
        prev.threshold = Some(sel.threshold);
        prev.num_maintained = sel.num_maintained;
        let prev = systems.last().unwrap();

        let m = sel.indices.len() * k;
        let mut sys = ParticleSystem {
            time: n,
            states: Vec::with_capacity(m),
            parents: Vec::with_capacity(m),
            log_weights: Vec::with_capacity(m),
            weights: Vec::new(),
            beliefs: Vec::with_capacity(m),
            stats: Vec::with_capacity(m),
            threshold: None,
            num_maintained: 0,
        };
        let u = model.input(n);
        let yn = &y[n - 1];
        for (&p, &corr) in sel.indices.iter().zip(&sel.log_corrections) {
            let last = prev.states[p];
            let stats = &prev.stats[p];
            let belief = &prev.beliefs[p];
            for x in 0..k {
                let s = model.system(x);
                let (b, ll) = step(s, belief, yn, u).map_err(|e| at_time(e, n))?;
                let lf = law.log_prob(stats, last, x);
                sys.log_weights.push(corr + lf + ll);
                sys.states.push(x);
                sys.parents.push(p);
                sys.beliefs.push(b);
                sys.stats.push(law.extend(stats, last, x));
            }
        }
        increments.push(normalize(&mut sys)?);
        if let Some(r) = reference {
            let pos = sel.reference.ok_or(Error::ConditioningImpossible { time: n - 1 })?;
            let kappa = pos * k + r[n - 1];
            if sys.log_weights[kappa] == f64::NEG_INFINITY {
                return Err(Error::ConditioningImpossible { time: n });
            }
            kappas.push(kappa);
        }
        if !store {
            let prev = systems.last_mut().unwrap();
            prev.beliefs = Vec::new();
            prev.stats = Vec::new();
        }
        systems.push(sys);
    }

    let log_evidence = increments.iter().sum();
    Ok((
        DpfOutput { systems, log_evidence, log_evidence_increments: increments, num_particles: n_particles },
        kappas,
    ))
}

/// Runs the discrete particle filter with `N` particles.
///
/// With `store_for_backward`, the filtered beliefs and path statistics of every
/// time step are kept for backward sampling; otherwise only the final ones are.
pub fn dpf_run<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &Theta,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
    store_for_backward: bool,
) -> Result<DpfOutput> {
    dpf_run_bound(&model.bind(theta)?, y, n_particles, rng, store_for_backward)
}

pub fn dpf_run_bound<R: Rng + ?Sized>(
    model: &BoundModel<'_>,
    y: &[DVector<f64>],
    n_particles: usize,
    rng: &mut R,
    store_for_backward: bool,
) -> Result<DpfOutput> {
    Ok(run_filter(model, y, n_particles, rng, store_for_backward, None)?.0)
}

/// Draws the index of a final-time particle according to `W_T`.
pub fn sample_final_index<R: Rng + ?Sized>(output: &DpfOutput, rng: &mut R) -> usize {
    let last = output.systems.last().expect("non-empty run");
    categorical_index(&last.weights, rng.random()).expect("normalized weights")
}

/// Draws a path `x_{1:T}` from the categorical law `{W_T}`.
pub fn sample_path<R: Rng + ?Sized>(output: &DpfOutput, rng: &mut R) -> Vec<usize> {
    let i = sample_final_index(output, rng);
    output.path(output.len(), i)
}
