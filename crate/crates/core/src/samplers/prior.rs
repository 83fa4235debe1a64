use std::collections::BTreeMap;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::math::LN_2PI;
use crate::model::{Theta, TransitionParam};

/// Prior on a single real parameter. Densities are returned up to constants
/// that do not depend on the parameter value.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    /// `N(mean, var)` restricted to `[lower, upper]` (use infinities for no truncation).
    Gaussian { mean: f64, var: f64, lower: f64, upper: f64 },
    /// Density `∝ x^{-shape-1} exp(-scale/x)`.
    InverseGamma { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { lower: f64, upper: f64 },
    /// Uniform over a finite set of values.
    Grid(Vec<f64>),
}

impl Prior {
    pub fn gaussian(mean: f64, var: f64) -> Self {
        Self::Gaussian { mean, var, lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn truncated_gaussian(mean: f64, var: f64, lower: f64, upper: f64) -> Self {
        Self::Gaussian { mean, var, lower, upper }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Self::Gaussian { var, lower, upper, .. } => *var > 0.0 && lower < upper,
            Self::InverseGamma { shape, scale } => *shape > 0.0 && *scale > 0.0,
            Self::Gamma { shape, rate } => *shape > 0.0 && *rate > 0.0,
            Self::Uniform { lower, upper } => lower < upper,
            Self::Grid(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid hyperparameters for prior on `{name}`: {self:?}"))
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, var, lower, upper } => {
                if x < lower || x > upper {
                    return f64::NEG_INFINITY;
                }
                -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
            }
            Self::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
            Self::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            Self::Uniform { lower, upper } => {
                if x < lower || x > upper {
                    f64::NEG_INFINITY
                } else {
                    -(upper - lower).ln()
                }
            }
            Self::Grid(ref values) => {
                if values.contains(&x) {
                    -(values.len() as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Joint prior: independent per-parameter priors plus independent Dirichlet rows
/// on the transition matrix.
///
/// Parameters without a declared prior are held fixed by every sampler.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PriorSpec {
    params: BTreeMap<String, Prior>,
    dirichlet: Option<DMatrix<f64>>,
}

impl PriorSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, prior: Prior) -> Result<Self> {
        prior.validate(name)?;
        self.params.insert(name.to_string(), prior);
        Ok(self)
    }

    /// Independent `Dirichlet(alpha[i, ·])` priors on the rows of `P_X`.
    pub fn with_dirichlet(mut self, alpha: DMatrix<f64>) -> Result<Self> {
        if alpha.nrows() != alpha.ncols() || alpha.iter().any(|&a| !(a > 0.0)) {
            return invalid("Dirichlet pseudo-counts must form a square matrix of positive entries");
        }
        self.dirichlet = Some(alpha);
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Prior> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Prior> {
        &self.params
    }

    /// True when no parameter and no transition prior is declared.
    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.dirichlet.is_none()
    }

    pub fn dirichlet(&self) -> Option<&DMatrix<f64>> {
        self.dirichlet.as_ref()
    }

    /// `log p(θ)` up to a constant; `-inf` outside the support.
    ///
    /// Unnormalised transition weights get the `Gamma(alpha, 1)` priors that
    /// induce the Dirichlet rows; a marginalised matrix contributes nothing.
    pub fn log_density(&self, theta: &Theta) -> Result<f64> {
        let mut lp = 0.0;
        for (name, prior) in &self.params {
            lp += prior.log_density(theta.get(name)?);
        }
        if let (Some(alpha), Some(t)) = (&self.dirichlet, theta.transition()) {
            if alpha.nrows() != t.num_states() {
                return invalid("Dirichlet prior and transition matrix have different sizes");
            }
            match t {
                TransitionParam::Explicit(p) => {
                    for (a, &p) in alpha.iter().zip(p.iter()) {
                        lp += if *a == 1.0 { 0.0 } else { (a - 1.0) * p.ln() };
                    }
                }
                TransitionParam::Unnormalized(w) => {
                    for (a, &w) in alpha.iter().zip(w.iter()) {
                        lp += (a - 1.0) * w.ln() - w - ln_gamma(*a);
                    }
                }
                TransitionParam::Marginalized { .. } => {}
            }
        }
        Ok(if lp.is_nan() { f64::NEG_INFINITY } else { lp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_gamma_density_matches_statrs() {
        use statrs::distribution::{Continuous, InverseGamma};
        let p = Prior::InverseGamma { shape: 2.0, scale: 3.0 };
        let reference = InverseGamma::new(2.0, 3.0).unwrap();
        for x in [0.1, 1.0, 2.5, 10.0] {
            assert!((p.log_density(x) - reference.ln_pdf(x)).abs() < 1e-12);
        }
        assert_eq!(p.log_density(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn truncation_gives_zero_density() {
        let p = Prior::truncated_gaussian(0.0, 10.0, -1.0, 1.0);
        assert!(p.log_density(0.5).is_finite());
        assert_eq!(p.log_density(1.5), f64::NEG_INFINITY);
    }

    #[test]
    fn grid_prior_support() {
        let p = Prior::Grid(vec![0.5, 1.0, 2.0]);
        assert!((p.log_density(1.0) + 3f64.ln()).abs() < 1e-15);
        assert_eq!(p.log_density(1.5), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(PriorSpec::new().with("s", Prior::InverseGamma { shape: 0.0, scale: 1.0 }).is_err());
        assert!(PriorSpec::new().with_dirichlet(DMatrix::from_element(2, 2, -1.0)).is_err());
    }
}
