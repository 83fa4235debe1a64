#![allow(dead_code)]

use std::sync::Arc;

use dpmcmc::model::builtin::{scalar_switching, ScalarSwitchingConfig};
use dpmcmc::model::{simulate, MatrixFn, ModelSpec, SystemMatrices, Theta, TransitionParam};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random row-stochastic `k x k` matrix with no tiny entries.
pub fn random_stochastic<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(k, k, |_, _| 0.2 + rng.random::<f64>());
    for i in 0..k {
        let s = p.row(i).sum();
        p.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// A random two-state switching model with state dimension `dz` and observation
/// dimension `dy`, and a parameter value for it. With `marginalized`, the
/// transition matrix is integrated out under random Dirichlet pseudo-counts.
pub fn random_model<R: Rng>(rng: &mut R, dz: usize, dy: usize, marginalized: bool) -> (ModelSpec, Theta) {
    let k = 2;
    let systems: Vec<SystemMatrices> = (0..k)
        .map(|_| {
            let a = normal_matrix(rng, dz, dz, 0.6 / (dz as f64).sqrt());
            let b = normal_matrix(rng, dz, dz, 0.7);
            let c = normal_matrix(rng, dy, dz, 1.0);
            let d = DMatrix::from_diagonal(&DVector::from_fn(dy, |_, _| 0.3 + rng.random::<f64>()));
            SystemMatrices::new(a, b, c, d)
        })
        .collect();
    let mats: MatrixFn = Arc::new(move |_: &Theta, x: usize| Ok(systems[x].clone()));
    let m0 = normal_matrix(rng, dz, 1, 1.0).column(0).into_owned();
    let l = normal_matrix(rng, dz, dz, 0.8);
    let s0 = &l * l.transpose() + DMatrix::identity(dz, dz) * 0.2;
    let spec = ModelSpec::new("random", k, mats, m0, s0).unwrap();
    let transition = if marginalized {
        TransitionParam::Marginalized { alpha: DMatrix::from_fn(k, k, |_, _| 0.5 + 2.0 * rng.random::<f64>()) }
    } else {
        TransitionParam::Explicit(random_stochastic(rng, k))
    };
    let theta = Theta::new(Vec::<(String, f64)>::new(), Some(transition)).unwrap();
    (spec, theta)
}

/// Observations drawn from the model at `theta`.
pub fn observations(spec: &ModelSpec, theta: &Theta, t: usize, seed: u64) -> Vec<DVector<f64>> {
    simulate(spec, theta, t, seed).unwrap().observations
}

/// The scalar toy model used by the sampler checks.
pub fn tiny_model() -> ModelSpec {
    scalar_switching(&ScalarSwitchingConfig::default()).unwrap()
}

pub fn tiny_theta(sigma2: f64) -> Theta {
    let p = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7]);
    Theta::new([("sigma2", sigma2)], Some(TransitionParam::Explicit(p))).unwrap()
}

/// Total variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalized histogram of integer labels.
pub fn frequencies(labels: &[usize], bins: usize) -> Vec<f64> {
    let mut f = vec![0.0; bins];
    for &l in labels {
        f[l] += 1.0;
    }
    let n = labels.len() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Sample autocorrelation at `lag`; `None` when the series has zero variance.
pub fn autocorrelation(xs: &[f64], lag: usize) -> Option<f64> {
    let n = xs.len();
    if lag >= n {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 {
        return None;
    }
    let cov: f64 = xs.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum();
    Some(cov / var)
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
