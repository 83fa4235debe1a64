//! Kalman filtering conditional on a discrete path, and exact simulation of the
//! continuous state given the path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::math::{psd_pinv, psd_sqrt, symmetrize, LN_2PI};
use crate::model::{BoundModel, BoundSystem, ModelSpec, Theta};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefKind {
    Filtered,
    Predicted,
}

/// Gaussian law of the continuous state, filtered or one-step predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub kind: BeliefKind,
}

impl GaussianBelief {
    /// Prior `N(m0, Σ0)` on `z_0`, treated as the filtered belief at time 0.
    pub fn initial(model: &ModelSpec) -> Self {
        Self {
            mean: model.init_mean().clone(),
            cov: model.init_cov().clone(),
            kind: BeliefKind::Filtered,
        }
    }
}

/// Moments and log-density of the one-step predictive law of `y_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
}

const MIN_INNOVATION: f64 = 1e-300;

/// Time update: `N(A m + F u, A Σ Aᵀ + B Bᵀ)`.
pub fn predict(sys: &BoundSystem, prev: &GaussianBelief, u: &DVector<f64>) -> GaussianBelief {
    let a = &sys.m.a;
    let mut mean = a * &prev.mean;
    if !u.is_empty() {
        mean += &sys.m.f * u;
    }
    let mut cov = a * &prev.cov * a.transpose() + &sys.q;
    symmetrize(&mut cov);
    GaussianBelief { mean, cov, kind: BeliefKind::Predicted }
}

/// Measurement update of a predicted belief.
pub fn update(
    sys: &BoundSystem,
    pred: &GaussianBelief,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(GaussianBelief, PredictiveStats)> {
    let c = &sys.m.c;
    let mut y_mean = c * &pred.mean;
    if !u.is_empty() {
        y_mean += &sys.m.g * u;
    }
    let pc_t = &pred.cov * c.transpose();
    let mut s = c * &pc_t + &sys.r;
    symmetrize(&mut s);
    let innov = y - &y_mean;

    let (gain, loglik) = if s.nrows() == 1 {
        let s0 = s[(0, 0)];
        if !(s0 > MIN_INNOVATION) {
            return Err(Error::Numerical(format!("innovation variance {s0:e} is singular")));
        }
        let e = innov[0];
        (&pc_t / s0, -0.5 * (LN_2PI + s0.ln() + e * e / s0))
    } else {
        let chol = s.clone().cholesky().ok_or_else(|| {
            Error::Numerical("innovation covariance is not positive definite".into())
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let solved = chol.solve(&innov);
        let quad = innov.dot(&solved);
        let gain = chol.solve(&pc_t.transpose()).transpose();
        let dim = s.nrows() as f64;
        (gain, -0.5 * (dim * LN_2PI + log_det + quad))
    };

    let mean = &pred.mean + &gain * &innov;
    let mut cov = &pred.cov - &gain * pc_t.transpose();
    symmetrize(&mut cov);
    Ok((
        GaussianBelief { mean, cov, kind: BeliefKind::Filtered },
        PredictiveStats { mean: y_mean, cov: s, loglik },
    ))
}

/// Predict and update in one pass for scalar observations and a state of
/// dimension `D`, using stack buffers. Returns the belief, the predictive mean and
/// variance of `y`, and the log-density.
fn small_scalar_step<const D: usize>(
    sys: &BoundSystem,
    prev: &GaussianBelief,
    y: f64,
    u: &DVector<f64>,
) -> Result<(GaussianBelief, f64, f64, f64)> {
    let a: [[f64; D]; D] = std::array::from_fn(|i| std::array::from_fn(|j| sys.m.a[(i, j)]));
    let pc: [[f64; D]; D] = std::array::from_fn(|i| std::array::from_fn(|j| prev.cov[(i, j)]));
    let c: [f64; D] = std::array::from_fn(|i| sys.m.c[(0, i)]);

    let mut m = [0.0; D];
    for i in 0..D {
        for j in 0..D {
            m[i] += a[i][j] * prev.mean[j];
        }
    }
    let mut y_mean = 0.0;
    if !u.is_empty() {
        let fu = &sys.m.f * u;
        for i in 0..D {
            m[i] += fu[i];
        }
        y_mean += (&sys.m.g * u)[0];
    }
    let mut ap = [[0.0; D]; D];
    for i in 0..D {
        for k in 0..D {
            for j in 0..D {
                ap[i][j] += a[i][k] * pc[k][j];
            }
        }
    }
    // P = A Σ Aᵀ + Q, upper triangle mirrored.
    let mut p = [[0.0; D]; D];
    for i in 0..D {
        for j in i..D {
            let mut v = 0.5 * (sys.q[(i, j)] + sys.q[(j, i)]);
            for k in 0..D {
                v += ap[i][k] * a[j][k];
            }
            p[i][j] = v;
            p[j][i] = v;
        }
    }
    let mut pct = [0.0; D];
    let mut s = sys.r[(0, 0)];
    for i in 0..D {
        for k in 0..D {
            pct[i] += p[i][k] * c[k];
        }
        s += c[i] * pct[i];
        y_mean += c[i] * m[i];
    }
    if !(s > MIN_INNOVATION) {
        return Err(Error::Numerical(format!("innovation variance {s:e} is singular")));
    }
    let e = y - y_mean;
    let loglik = -0.5 * (LN_2PI + s.ln() + e * e / s);
    let mean = DVector::from_fn(D, |i, _| m[i] + pct[i] * e / s);
    let cov = DMatrix::from_fn(D, D, |i, j| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        p[i][j] - pct[i] * pct[j] / s
    });
    Ok((GaussianBelief { mean, cov, kind: BeliefKind::Filtered }, y_mean, s, loglik))
}

/// Dispatches to [`small_scalar_step`] when it applies.
fn fast_step(
    sys: &BoundSystem,
    prev: &GaussianBelief,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Option<Result<(GaussianBelief, f64, f64, f64)>> {
    if y.len() != 1 {
        return None;
    }
    Some(match prev.mean.len() {
        1 => small_scalar_step::<1>(sys, prev, y[0], u),
        2 => small_scalar_step::<2>(sys, prev, y[0], u),
        3 => small_scalar_step::<3>(sys, prev, y[0], u),
        4 => small_scalar_step::<4>(sys, prev, y[0], u),
        _ => return None,
    })
}

/// Predict then update; returns the filtered belief and `log p(y_n | y_{1:n-1})`.
pub fn step(
    sys: &BoundSystem,
    prev: &GaussianBelief,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(GaussianBelief, f64)> {
    if let Some(r) = fast_step(sys, prev, y, u) {
        let (b, _, _, ll) = r?;
        return Ok((b, ll));
    }
    let (b, stats) = update(sys, &predict(sys, prev, u), y, u)?;
    Ok((b, stats.loglik))
}

/// One Kalman recursion from the filtered belief at `n-1` under discrete state `x`.
pub fn kalman_step(
    model: &BoundModel<'_>,
    prev: &GaussianBelief,
    x: usize,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(GaussianBelief, PredictiveStats)> {
    if prev.kind != BeliefKind::Filtered {
        return invalid("kalman_step expects a filtered belief");
    }
    if x >= model.num_states() {
        return invalid(format!("state {x} out of range"));
    }
    if y.len() != model.obs_dim() {
        return invalid(format!("observation has dimension {}, model expects {}", y.len(), model.obs_dim()));
    }
    let sys = model.system(x);
    if let Some(r) = fast_step(sys, prev, y, u) {
        let (b, y_mean, s, loglik) = r?;
        let stats = PredictiveStats {
            mean: DVector::from_element(1, y_mean),
            cov: DMatrix::from_element(1, 1, s),
            loglik,
        };
        return Ok((b, stats));
    }
    update(sys, &predict(sys, prev, u), y, u)
}

fn check_lengths(model: &BoundModel<'_>, path: &[usize], y: &[DVector<f64>]) -> Result<()> {
    if path.len() != y.len() {
        return invalid(format!("path has length {}, data has length {}", path.len(), y.len()));
    }
    if path.is_empty() {
        return invalid("empty data record");
    }
    model.check_path(path)
}

/// Filtered beliefs `n = 0..T` and the summed predictive log-densities.
pub fn filter_path(
    model: &BoundModel<'_>,
    path: &[usize],
    y: &[DVector<f64>],
) -> Result<(Vec<GaussianBelief>, f64)> {
    check_lengths(model, path, y)?;
    let mut beliefs = Vec::with_capacity(path.len() + 1);
    beliefs.push(GaussianBelief::initial(model.spec()));
    let mut total = 0.0;
    for (i, (&x, yn)) in path.iter().zip(y).enumerate() {
        let (b, stats) = kalman_step(model, &beliefs[i], x, yn, model.input(i + 1))
            .map_err(|e| with_time(e, i + 1))?;
        total += stats.loglik;
        beliefs.push(b);
    }
    Ok((beliefs, total))
}

fn with_time(e: Error, n: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("time {n}: {msg}")),
        other => other,
    }
}

/// `log p_θ(y_{1:T} | x_{1:T})` as the sum of Kalman predictive log-densities.
pub fn conditional_loglik(model: &ModelSpec, theta: &Theta, path: &[usize], y: &[DVector<f64>]) -> Result<f64> {
    conditional_loglik_bound(&model.bind(theta)?, path, y)
}

pub fn conditional_loglik_bound(model: &BoundModel<'_>, path: &[usize], y: &[DVector<f64>]) -> Result<f64> {
    check_lengths(model, path, y)?;
    let mut belief = GaussianBelief::initial(model.spec());
    let mut total = 0.0;
    for (i, (&x, yn)) in path.iter().zip(y).enumerate() {
        let (b, stats) = kalman_step(model, &belief, x, yn, model.input(i + 1)).map_err(|e| with_time(e, i + 1))?;
        total += stats.loglik;
        belief = b;
    }
    Ok(total)
}

const CLAMP_WARN: f64 = 1e-8;

fn draw(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut (impl Rng + ?Sized), n: usize) -> DVector<f64> {
    let (root, most_negative) = psd_sqrt(cov);
    let scale = cov.diagonal().iter().fold(1.0_f64, |a, &v| a.max(v.abs()));
    if most_negative < -CLAMP_WARN * scale {
        log::warn!("clamped eigenvalue {most_negative:e} of the backward covariance at time {n}");
    }
    let xi = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    mean + root * xi
}

/// Exact draw of `z_{0:T}` from `p_θ(z_{0:T} | y_{1:T}, x_{1:T})` by forward filtering
/// and backward simulation.
pub fn ffbs_continuous<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &Theta,
    path: &[usize],
    y: &[DVector<f64>],
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    ffbs_continuous_bound(&model.bind(theta)?, path, y, rng)
}

pub fn ffbs_continuous_bound<R: Rng + ?Sized>(
    model: &BoundModel<'_>,
    path: &[usize],
    y: &[DVector<f64>],
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let (beliefs, _) = filter_path(model, path, y)?;
    let t = path.len();
    let mut z = vec![DVector::zeros(0); t + 1];
    z[t] = draw(&beliefs[t].mean, &beliefs[t].cov, rng, t);
    for n in (0..t).rev() {
        let sys = model.system(path[n]);
        let filt = &beliefs[n];
        let a = &sys.m.a;
        let pred = predict(sys, filt, model.input(n + 1));
        let gain = &filt.cov * a.transpose() * psd_pinv(&pred.cov);
        let mean = &filt.mean + &gain * (&z[n + 1] - &pred.mean);
        let mut cov = &filt.cov - &gain * a * &filt.cov;
        symmetrize(&mut cov);
        z[n] = draw(&mean, &cov, rng, n);
    }
    Ok(z)
}
