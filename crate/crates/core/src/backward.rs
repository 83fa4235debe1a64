//! Backward information recursion and backward sampling of discrete paths.
//!
//! For a fixed future `x'_{n+1:T}`, the likelihood of the future observations
//! given `z_n` is Gaussian-shaped in `z_n`:
//!
//! ```text
//! p(y_{n+1:T} | z_n, x'_{n+1:T}) ∝ exp(-(zᵀ Ξ_n z - 2 μ_nᵀ z) / 2)
//! ```
//!
//! and `(Ξ_n, μ_n)` follow from `(Ξ_{n+1}, μ_{n+1})` in one step. Integrating
//! against a filtered belief then weighs every prefix `x_{1:n}` in a particle
//! system by how well it explains the future. Observations must be scalar.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dpf::DpfOutput;
use crate::error::{invalid, Error, Result};
use crate::kalman::GaussianBelief;
use crate::math::{categorical_index, log_sum_exp, psd_sqrt, symmetrize};
use crate::model::{BoundModel, Suffix};

/// Coefficients `(Ξ_n, μ_n)` of `z_n` in `p(y_{n+1:T} | z_n, x'_{n+1:T})`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardPotential {
    pub xi: DMatrix<f64>,
    pub mu: DVector<f64>,
}

impl BackwardPotential {
    /// `Ξ_T = 0`, `μ_T = 0`.
    pub fn terminal(state_dim: usize) -> Self {
        Self { xi: DMatrix::zeros(state_dim, state_dim), mu: DVector::zeros(state_dim) }
    }
}

const MIN_OBS_VARIANCE: f64 = 1e-300;

/// One step of the backward recursion from time `n+1` to `n`, using the state
/// `x_{n+1}`, scalar observation `y_{n+1}` and input `u_{n+1}`.
pub fn backward_potential_step(
    model: &BoundModel<'_>,
    next: &BackwardPotential,
    x_next: usize,
    y_next: f64,
    u_next: &DVector<f64>,
) -> Result<BackwardPotential> {
    model.require_scalar_observations("backward recursion")?;
    let sys = model.system(x_next);
    let (a, c, q) = (&sys.m.a, &sys.m.c, &sys.q);
    let d = a.nrows();

    // Observation noise r = C Q Cᵀ + D Dᵀ of y_{n+1} given z_n.
    let qc = q * c.transpose();
    let r = (c * &qc)[(0, 0)] + sys.r[(0, 0)];
    if !(r > MIN_OBS_VARIANCE) {
        return Err(Error::Unsupported(format!(
            "observation given the previous state is noise-free in state {x_next} (r = {r:e})"
        )));
    }
    let phi = &qc / r;
    // z_{n+1} | z_n, y_{n+1} = Λ z_n + a + Φ y_{n+1} + Γ ε.
    let (gamma, _) = psd_sqrt(&(q - &phi * qc.transpose()));
    let i_phi_c = DMatrix::identity(d, d) - &phi * c;
    let lambda = &i_phi_c * a;
    let (mut fu, mut gu) = (DVector::zeros(d), 0.0);
    if !u_next.is_empty() {
        fu = &sys.m.f * u_next;
        gu = (&sys.m.g * u_next)[0];
    }
    let offset = &i_phi_c * &fu - &phi * gu;

    let xi = &next.xi;
    let m = gamma.transpose() * xi * &gamma + DMatrix::identity(d, d);
    let m_inv = m
        .try_inverse()
        .ok_or_else(|| Error::Numerical("backward recursion: M is singular".into()))?;
    let k = &gamma * m_inv * gamma.transpose();
    let xi_k = xi * &k;

    let ca = c * a;
    let mut xi_n = lambda.transpose() * (xi - &xi_k * xi) * &lambda + ca.transpose() * &ca / r;
    symmetrize(&mut xi_n);
    let b = offset + &phi * y_next;
    let inner = (DMatrix::identity(d, d) - xi_k) * (&next.mu - xi * b);
    let resid = y_next - gu - (c * &fu)[0];
    let mu_n = lambda.transpose() * inner + ca.transpose() * (resid / r);
    Ok(BackwardPotential { xi: xi_n, mu: mu_n.column(0).into_owned() })
}

/// `log ∫ N(z; m, Σ) exp(-(zᵀΞz - 2μᵀz)/2) dz`.
///
/// Equals the log of `p(y_{n+1:T} | y_{1:n}, x_{1:n}, x'_{n+1:T})` up to a constant
/// shared by every candidate prefix at the same time. With `Σ = ΥΥᵀ` and
/// `H = ΥᵀΞΥ + I`, the value is
/// `-(mᵀΞm - 2μᵀm)/2 + dᵀΥH⁻¹Υᵀd/2 - ln|H|/2` with `d = μ - Ξm`; it is evaluated
/// through `ΥH⁻¹Υᵀ = (I + ΣΞ)⁻¹Σ` and `|H| = |I + ΣΞ|`, which avoids factorizing `Σ`.
pub fn backward_loglik(potential: &BackwardPotential, belief: &GaussianBelief) -> Result<f64> {
    let (xi, mu) = (&potential.xi, &potential.mu);
    let m = &belief.mean;
    let xm = xi * m;
    let base = -0.5 * (m.dot(&xm) - 2.0 * mu.dot(m));
    let d = mu - xm;
    let n = m.len();
    if n == 1 {
        let s = belief.cov[(0, 0)].max(0.0);
        let g = 1.0 + s * xi[(0, 0)];
        if !(g > 0.0) {
            return Err(Error::Numerical(format!("backward likelihood: |I + ΣΞ| = {g}")));
        }
        return Ok(base + 0.5 * d[0] * d[0] * s / g - 0.5 * g.ln());
    }
    match n {
        2 => return small_loglik::<2>(base, &d, xi, &belief.cov),
        3 => return small_loglik::<3>(base, &d, xi, &belief.cov),
        4 => return small_loglik::<4>(base, &d, xi, &belief.cov),
        _ => {}
    }
    let g = DMatrix::identity(n, n) + &belief.cov * xi;
    let lu = g.lu();
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(Error::Numerical(format!("backward likelihood: |I + ΣΞ| = {det}")));
    }
    let corr = lu
        .solve(&belief.cov)
        .ok_or_else(|| Error::Numerical("backward likelihood: I + ΣΞ is singular".into()))?;
    Ok(base + 0.5 * d.dot(&(corr * &d)) - 0.5 * det.ln())
}

/// `base + dᵀ(I + ΣΞ)⁻¹Σd/2 - ln|I + ΣΞ|/2` by Gaussian elimination with partial
/// pivoting on stack buffers.
fn small_loglik<const D: usize>(base: f64, d: &DVector<f64>, xi: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let mut h = [[0.0; D]; D];
    let mut rhs = [0.0; D];
    for i in 0..D {
        for j in 0..D {
            let mut v = if i == j { 1.0 } else { 0.0 };
            for k in 0..D {
                v += cov[(i, k)] * xi[(k, j)];
            }
            h[i][j] = v;
            rhs[i] += cov[(i, j)] * d[j];
        }
    }
    let mut det = 1.0;
    for col in 0..D {
        let piv = (col..D).max_by(|&a, &b| h[a][col].abs().total_cmp(&h[b][col].abs())).unwrap();
        if piv != col {
            h.swap(piv, col);
            rhs.swap(piv, col);
            det = -det;
        }
        let p = h[col][col];
        if p == 0.0 {
            return Err(Error::Numerical("backward likelihood: I + ΣΞ is singular".into()));
        }
        det *= p;
        for r in col + 1..D {
            let f = h[r][col] / p;
            for c in col..D {
                h[r][c] -= f * h[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    if !(det > 0.0) {
        return Err(Error::Numerical(format!("backward likelihood: |I + ΣΞ| = {det}")));
    }
    let mut v = [0.0; D];
    for i in (0..D).rev() {
        let mut acc = rhs[i];
        for j in i + 1..D {
            acc -= h[i][j] * v[j];
        }
        v[i] = acc / h[i][i];
    }
    let quad: f64 = (0..D).map(|i| d[i] * v[i]).sum();
    Ok(base + 0.5 * quad - 0.5 * det.ln())
}

/// The same quantity as [`backward_loglik`], evaluated literally from a symmetric
/// square root `Υ` of the belief covariance.
pub fn backward_loglik_factored(potential: &BackwardPotential, belief: &GaussianBelief) -> Result<f64> {
    let (xi, mu) = (&potential.xi, &potential.mu);
    let m = &belief.mean;
    let n = m.len();
    let (ups, _) = psd_sqrt(&belief.cov);
    let h = ups.transpose() * xi * &ups + DMatrix::identity(n, n);
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("backward likelihood: H is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let d = mu - xi * m;
    let ud = ups.transpose() * &d;
    let quad = ud.dot(&chol.solve(&ud));
    Ok(-0.5 * (m.dot(&(xi * m)) - 2.0 * mu.dot(m) - quad) - 0.5 * log_det)
}

/// Normalized backward weights `V_n` over the particles of system `n`, given the
/// future `x'_{n+1:T}` summarised by `suffix` and the potential at `n`.
pub fn backward_weights(
    run: &DpfOutput,
    model: &BoundModel<'_>,
    n: usize,
    potential: &BackwardPotential,
    suffix: &Suffix,
) -> Result<Vec<f64>> {
    let sys = run.system(n);
    if !sys.has_stored_beliefs() || sys.stats.len() != sys.len() {
        return invalid(format!("particle system at time {n} has no stored beliefs"));
    }
    let law = model.law();
    let mut log_v = Vec::with_capacity(sys.len());
    for i in 0..sys.len() {
        let w = sys.weights[i];
        if !(w > 0.0) {
            log_v.push(f64::NEG_INFINITY);
            continue;
        }
        let lf = law.log_suffix_prob(&sys.stats[i], sys.states[i], suffix);
        if lf == f64::NEG_INFINITY {
            log_v.push(lf);
            continue;
        }
        log_v.push(w.ln() + lf + backward_loglik(potential, &sys.beliefs[i])?);
    }
    let lse = log_sum_exp(&log_v);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return Err(Error::BackwardInconsistent { time: n });
    }
    Ok(log_v.iter().map(|&l| (l - lse).exp()).collect())
}

/// Backward sampling of a full path from a run with stored beliefs.
pub fn backward_sample<R: Rng + ?Sized>(
    run: &DpfOutput,
    model: &BoundModel<'_>,
    y: &[DVector<f64>],
    rng: &mut R,
) -> Result<Vec<usize>> {
    backward_sample_truncated(run, model, y, 1, rng)
}

/// Backward sampling stopped at time `stop`: the path is the whole prefix of the
/// particle chosen at `stop` followed by the suffix drawn so far. `stop = T` is a
/// single draw from `{W_T}`; `stop = 1` is full backward sampling.
pub fn backward_sample_truncated<R: Rng + ?Sized>(
    run: &DpfOutput,
    model: &BoundModel<'_>,
    y: &[DVector<f64>],
    stop: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let t = run.len();
    if stop == 0 || stop > t {
        return invalid(format!("truncation time {stop} outside 1..={t}"));
    }
    if y.len() != t {
        return invalid("observations and particle run have different lengths");
    }
    let last = run.system(t);
    let i_t = categorical_index(&last.weights, rng.random()).ok_or(Error::BackwardInconsistent { time: t })?;
    if stop == t {
        return Ok(run.path(t, i_t));
    }
    model.require_scalar_observations("backward sampling")?;
    let mut suffix = Suffix::new(model.num_states(), last.states[i_t]);
    let mut potential = BackwardPotential::terminal(model.state_dim());
    for n in (stop..t).rev() {
        potential = backward_potential_step(model, &potential, suffix.first(), y[n][0], model.input(n + 1))?;
        let v = backward_weights(run, model, n, &potential, &suffix)?;
        let i = categorical_index(&v, rng.random()).ok_or(Error::BackwardInconsistent { time: n })?;
        if n == stop {
            let mut path = run.path(n, i);
            path.extend(suffix.states());
            return Ok(path);
        }
        suffix.push_front(run.system(n).states[i]);
    }
    unreachable!("loop returns at n == stop")
}
