//! Exact inference on small instances by exhaustive enumeration of discrete paths,
//! and a joint-Gaussian reference for a single path that bypasses the Kalman
//! recursion entirely.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kalman::conditional_loglik_bound;
use crate::math::{log_sum_exp, LN_2PI};
use crate::model::{BoundModel, ModelSpec, Theta};

/// Largest number of paths [`enumerate_posterior`] will visit.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// `p_θ(x_{1:T} | y_{1:T})` over all of `X^T`, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPosterior {
    pub num_states: usize,
    pub len: usize,
    pub table: Vec<f64>,
    /// `log p_θ(x_{1:T}, y_{1:T})` per path.
    pub log_joint: Vec<f64>,
    /// `log p_θ(y_{1:T})`.
    pub log_marginal: f64,
}

impl ExactPosterior {
    pub fn probability(&self, path: &[usize]) -> f64 {
        self.table[path_index(path, self.num_states)]
    }
}

/// Lexicographic rank of a path (first coordinate most significant).
pub fn path_index(path: &[usize], num_states: usize) -> usize {
    path.iter().fold(0, |acc, &x| acc * num_states + x)
}

/// Inverse of [`path_index`].
pub fn path_from_index(mut index: usize, num_states: usize, len: usize) -> Vec<usize> {
    let mut path = vec![0; len];
    for slot in path.iter_mut().rev() {
        *slot = index % num_states;
        index /= num_states;
    }
    path
}

fn check_size(num_states: usize, len: usize) -> Result<usize> {
    let paths = (num_states as f64).powi(len as i32);
    if paths > ENUMERATION_LIMIT as f64 {
        return Err(Error::TooLarge { paths, limit: ENUMERATION_LIMIT });
    }
    Ok(paths as usize)
}

/// Evaluates `p_θ(y | x) p_θ(x)` for every path and normalizes.
pub fn enumerate_posterior(model: &ModelSpec, theta: &Theta, y: &[DVector<f64>]) -> Result<ExactPosterior> {
    enumerate_posterior_bound(&model.bind(theta)?, y)
}

pub fn enumerate_posterior_bound(model: &BoundModel<'_>, y: &[DVector<f64>]) -> Result<ExactPosterior> {
    if y.is_empty() {
        return invalid("empty data record");
    }
    let k = model.num_states();
    let count = check_size(k, y.len())?;
    let mut log_joint = Vec::with_capacity(count);
    for idx in 0..count {
        let path = path_from_index(idx, k, y.len());
        let prior = model.log_path_prior(&path);
        let lj = if prior == f64::NEG_INFINITY {
            prior
        } else {
            prior + conditional_loglik_bound(model, &path, y)?
        };
        log_joint.push(lj);
    }
    let log_marginal = log_sum_exp(&log_joint);
    if log_marginal == f64::NEG_INFINITY {
        return Err(Error::Numerical("every path has zero posterior probability".into()));
    }
    let table = log_joint.iter().map(|&l| (l - log_marginal).exp()).collect();
    Ok(ExactPosterior { num_states: k, len: y.len(), table, log_joint, log_marginal })
}

/// `p_θ(x_n = x | y_{1:T})` indexed as `[n - 1][x]`.
pub fn posterior_marginals(exact: &ExactPosterior) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; exact.num_states]; exact.len];
    for (idx, &p) in exact.table.iter().enumerate() {
        let path = path_from_index(idx, exact.num_states, exact.len);
        for (n, &x) in path.iter().enumerate() {
            out[n][x] += p;
        }
    }
    out
}

/// The stacked states `z_{s:T}` and observations `y_{s+1:T}` along a fixed path,
/// written as an affine map of independent Gaussian inputs
/// `(z_s, V_{s+1}, .., V_T, W_{s+1}, .., W_T)`.
#[derive(Clone, Debug)]
pub struct JointGaussian {
    state_dim: usize,
    obs_dim: usize,
    len: usize,
    z_map: DMatrix<f64>,
    z_offset: DVector<f64>,
    y_map: DMatrix<f64>,
    y_offset: DVector<f64>,
    base_mean: DVector<f64>,
    base_cov: DMatrix<f64>,
}

impl JointGaussian {
    /// Joint law of `z_{0:T}` and `y_{1:T}` under `path = x_{1:T}`.
    pub fn new(model: &BoundModel<'_>, path: &[usize]) -> Result<Self> {
        let spec = model.spec();
        Self::from_time(model, path, 0, spec.init_mean(), spec.init_cov())
    }

    /// Joint law of `z_{s:T}` and `y_{s+1:T}` given `z_s ~ N(mean, cov)` and
    /// the states `x_{s+1:T}` listed in `suffix`.
    pub fn from_time(
        model: &BoundModel<'_>,
        suffix: &[usize],
        start: usize,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<Self> {
        model.check_path(suffix)?;
        let d = model.state_dim();
        let ny = model.obs_dim();
        let s0 = model.system(0);
        let (nv, nw) = (s0.m.b.ncols(), s0.m.d.ncols());
        let t = suffix.len();
        let dim = d + t * (nv + nw);
        let v_col = |i: usize| d + i * nv;
        let w_col = |i: usize| d + t * nv + i * nw;

        let mut base_mean = DVector::zeros(dim);
        base_mean.rows_mut(0, d).copy_from(mean);
        let mut base_cov = DMatrix::identity(dim, dim);
        base_cov.view_mut((0, 0), (d, d)).copy_from(cov);

        let mut z_map = DMatrix::zeros((t + 1) * d, dim);
        let mut z_offset = DVector::zeros((t + 1) * d);
        let mut y_map = DMatrix::zeros(t * ny, dim);
        let mut y_offset = DVector::zeros(t * ny);
        z_map.view_mut((0, 0), (d, d)).fill_with_identity();

        for (i, &x) in suffix.iter().enumerate() {
            let sys = &model.system(x).m;
            let u = model.input(start + i + 1);
            let prev_map = z_map.rows(i * d, d).into_owned();
            let prev_off = z_offset.rows(i * d, d).into_owned();
            let mut row_map = &sys.a * prev_map;
            row_map.view_mut((0, v_col(i)), (d, nv)).copy_from(&sys.b);
            let mut row_off = &sys.a * prev_off;
            if !u.is_empty() {
                row_off += &sys.f * u;
            }
            let mut obs_map = &sys.c * &row_map;
            obs_map.view_mut((0, w_col(i)), (ny, nw)).copy_from(&sys.d);
            let mut obs_off = &sys.c * &row_off;
            if !u.is_empty() {
                obs_off += &sys.g * u;
            }
            z_map.rows_mut((i + 1) * d, d).copy_from(&row_map);
            z_offset.rows_mut((i + 1) * d, d).copy_from(&row_off);
            y_map.rows_mut(i * ny, ny).copy_from(&obs_map);
            y_offset.rows_mut(i * ny, ny).copy_from(&obs_off);
        }
        Ok(Self { state_dim: d, obs_dim: ny, len: t, z_map, z_offset, y_map, y_offset, base_mean, base_cov })
    }

    fn stack(&self, y: &[DVector<f64>]) -> Result<DVector<f64>> {
        if y.len() != self.len || y.iter().any(|v| v.len() != self.obs_dim) {
            return invalid("observations do not match the joint Gaussian");
        }
        Ok(DVector::from_iterator(self.len * self.obs_dim, y.iter().flat_map(|v| v.iter().copied())))
    }

    pub fn y_mean(&self) -> DVector<f64> {
        &self.y_map * &self.base_mean + &self.y_offset
    }

    pub fn y_cov(&self) -> DMatrix<f64> {
        &self.y_map * &self.base_cov * self.y_map.transpose()
    }

    /// Log-density of the stacked observations.
    pub fn log_density(&self, y: &[DVector<f64>]) -> Result<f64> {
        let yv = self.stack(y)?;
        let resid = yv - self.y_mean();
        let chol = self
            .y_cov()
            .cholesky()
            .ok_or_else(|| Error::Numerical("joint observation covariance is singular".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = resid.dot(&chol.solve(&resid));
        Ok(-0.5 * (resid.len() as f64 * LN_2PI + log_det + quad))
    }

    /// Mean and covariance of the stacked states given the observations.
    pub fn smoothing(&self, y: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let yv = self.stack(y)?;
        let z_mean = &self.z_map * &self.base_mean + &self.z_offset;
        let z_cov = &self.z_map * &self.base_cov * self.z_map.transpose();
        let zy = &self.z_map * &self.base_cov * self.y_map.transpose();
        let chol = self
            .y_cov()
            .cholesky()
            .ok_or_else(|| Error::Numerical("joint observation covariance is singular".into()))?;
        let mean = z_mean + &zy * chol.solve(&(yv - self.y_mean()));
        let cov = z_cov - &zy * chol.solve(&zy.transpose());
        Ok((mean, cov))
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for idx in 0..27 {
            assert_eq!(path_index(&path_from_index(idx, 3, 3), 3), idx);
        }
        assert_eq!(path_from_index(5, 2, 3), vec![1, 0, 1]);
    }

    #[test]
    fn marginals_of_point_mass_and_uniform() {
        let mut table = vec![0.0; 8];
        table[path_index(&[1, 0, 1], 2)] = 1.0;
        let exact = ExactPosterior { num_states: 2, len: 3, table, log_joint: vec![], log_marginal: 0.0 };
        let m = posterior_marginals(&exact);
        assert_eq!(m, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);

        let uniform = ExactPosterior { num_states: 2, len: 3, table: vec![0.125; 8], log_joint: vec![], log_marginal: 0.0 };
        for row in posterior_marginals(&uniform) {
            assert_eq!(row, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn guard_rejects_large_enumerations() {
        assert!(matches!(check_size(2, 21), Err(Error::TooLarge { .. })));
        assert!(check_size(2, 19).is_ok());
    }
}
