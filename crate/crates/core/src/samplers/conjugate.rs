//! Conjugate full-conditional updates of the static parameters.
//!
//! Models register a [`ConjugateRule`] that knows which residuals inform which
//! parameter; the helpers here do the conjugacy arithmetic and the draws.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::prior::{Prior, PriorSpec};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelSpec, Theta, TransitionLaw, TransitionParam};

/// Everything a conjugate rule may condition on.
pub struct ConjugateInput<'a> {
    pub model: &'a ModelSpec,
    pub theta: &'a Theta,
    pub priors: &'a PriorSpec,
    pub path: &'a [usize],
    /// `z_0, .., z_T` when the rule needs the continuous state.
    pub z: Option<&'a [DVector<f64>]>,
    pub y: &'a [DVector<f64>],
}

impl ConjugateInput<'_> {
    pub fn continuous(&self) -> Result<&[DVector<f64>]> {
        let z = self
            .z
            .ok_or_else(|| Error::InvalidArgument("conjugate rule needs the continuous state z_{0:T}".into()))?;
        if z.len() != self.path.len() + 1 {
            return invalid(format!(
                "continuous state has {} entries, expected T + 1 = {}",
                z.len(),
                self.path.len() + 1
            ));
        }
        Ok(z)
    }
}

/// Draws `θ` from `p(θ | y, x)` or `p(θ | y, x, z)`.
pub trait ConjugateRule: Send + Sync {
    fn needs_continuous_state(&self) -> bool;
    fn update(&self, input: &ConjugateInput<'_>, rng: &mut dyn RngCore) -> Result<Theta>;
}

/// Applies the model's registered conjugate rule.
pub fn conjugate_update_theta(
    model: &ModelSpec,
    priors: &PriorSpec,
    theta: &Theta,
    path: &[usize],
    z: Option<&[DVector<f64>]>,
    y: &[DVector<f64>],
    rng: &mut dyn RngCore,
) -> Result<Theta> {
    let rule = model.conjugate_rule().ok_or_else(|| {
        Error::Unsupported(format!("model `{}` has no conjugate update rule", model.name()))
    })?;
    if path.len() != y.len() {
        return invalid("path and observations have different lengths");
    }
    if rule.needs_continuous_state() && z.is_none() {
        return invalid("conjugate rule needs the continuous state z_{0:T}");
    }
    let input = ConjugateInput { model, theta, priors, path, z, y };
    let new = rule.update(&input, rng)?;
    model.check_theta(&new)?;
    Ok(new)
}

/// `X ~ Gamma(shape, 1)`.
pub fn sample_gamma(shape: f64, rng: &mut dyn RngCore) -> Result<f64> {
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidArgument(format!("gamma({shape}): {e}")))?;
    Ok(g.sample(rng))
}

/// `X ~ IG(shape, scale)`, i.e. `scale / Gamma(shape, 1)`.
pub fn sample_inverse_gamma(shape: f64, scale: f64, rng: &mut dyn RngCore) -> Result<f64> {
    Ok(scale / sample_gamma(shape, rng)?)
}

/// Posterior hyperparameters for a variance with inverse-gamma prior given `k`
/// zero-mean Gaussian residuals with sum of squares `ss`.
pub fn inverse_gamma_posterior(prior: &Prior, ss: f64, k: usize) -> Result<(f64, f64)> {
    match *prior {
        Prior::InverseGamma { shape, scale } => Ok((shape + 0.5 * k as f64, scale + 0.5 * ss)),
        _ => invalid(format!("conjugate variance update needs an inverse-gamma prior, got {prior:?}")),
    }
}

/// Redraws the variance `name` if it has a prior; parameters without one stay fixed.
pub fn update_variance(
    theta: &mut Theta,
    priors: &PriorSpec,
    name: &str,
    ss: f64,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<()> {
    if let Some(prior) = priors.get(name) {
        let (a, b) = inverse_gamma_posterior(prior, ss, k)?;
        theta.set(name, sample_inverse_gamma(a, b, rng)?);
    }
    Ok(())
}

const MAX_REJECTIONS: usize = 1_000_000;

/// `N(mean, var)` restricted to `[lower, upper]`, by rejection from the unrestricted law.
pub fn sample_truncated_gaussian(
    mean: f64,
    var: f64,
    lower: f64,
    upper: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let sd = var.sqrt();
    for _ in 0..MAX_REJECTIONS {
        let v = mean + sd * rng.sample::<f64, _>(StandardNormal);
        if v >= lower && v <= upper {
            return Ok(v);
        }
    }
    Err(Error::Numerical(format!(
        "truncated Gaussian N({mean}, {var}) on [{lower}, {upper}] rejected {MAX_REJECTIONS} draws"
    )))
}

/// Redraws the transition component from its Dirichlet full conditional.
///
/// Explicit matrices get `Dir(alpha + counts)` rows. Unnormalised weights get
/// independent `Gamma(alpha + counts, 1)` entries, whose row-normalisation has
/// that same Dirichlet law. Marginalised matrices are left alone.
pub fn update_transition(
    theta: &mut Theta,
    priors: &PriorSpec,
    path: &[usize],
    rng: &mut dyn RngCore,
) -> Result<()> {
    let Some(alpha) = priors.dirichlet() else {
        return Ok(());
    };
    let k = alpha.nrows();
    let counts = TransitionLaw::transition_counts(k, path);
    let posterior = DMatrix::from_fn(k, k, |i, j| alpha[(i, j)] + f64::from(counts[i * k + j]));
    let new = match theta.transition() {
        Some(TransitionParam::Explicit(_)) => {
            let mut p = DMatrix::zeros(k, k);
            for i in 0..k {
                let mut row = Vec::with_capacity(k);
                for j in 0..k {
                    row.push(sample_gamma(posterior[(i, j)], rng)?);
                }
                let s: f64 = row.iter().sum();
                for j in 0..k {
                    p[(i, j)] = row[j] / s;
                }
                // Keep the row exactly stochastic despite rounding.
                let drift: f64 = 1.0 - p.row(i).sum();
                let jmax = (0..k).max_by(|&a, &b| p[(i, a)].total_cmp(&p[(i, b)])).unwrap();
                p[(i, jmax)] += drift;
            }
            TransitionParam::Explicit(p)
        }
        Some(TransitionParam::Unnormalized(_)) => {
            let mut w = DMatrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    w[(i, j)] = sample_gamma(posterior[(i, j)], rng)?.max(f64::MIN_POSITIVE);
                }
            }
            TransitionParam::Unnormalized(w)
        }
        _ => return Ok(()),
    };
    theta.set_transition(new)
}
