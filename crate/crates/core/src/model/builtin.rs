//! Ready-made models: an autoregression with shifting level, a piecewise-linear
//! change-point model for well-log data, a switching-variance exchange-rate model,
//! and a scalar toy model used for exact small-scale checks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::{MatrixFn, ModelSpec, ParamConstraint, SystemMatrices, Theta, TransitionParam};
use crate::error::{Error, Result};
use crate::samplers::conjugate::{
    sample_truncated_gaussian, update_transition, update_variance, ConjugateInput, ConjugateRule,
};
use crate::samplers::prior::{Prior, PriorSpec};
use crate::samplers::proposal::{Block, Move, ProposalSpec, Target};

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn positive(theta: &Theta, name: &str) -> Result<f64> {
    let v = theta.get(name)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("`{name}` must be positive, got {v}")))
    }
}

fn flat_dirichlet(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(k, k, 1.0)
}

/// Settings of the autoregression-with-shifting-level model.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoregressionConfig {
    /// Prior variance of the initial deviation `y_0 - mu_0`.
    pub e0_var: f64,
    pub mu0_mean: f64,
    pub mu0_var: f64,
}

impl Default for AutoregressionConfig {
    fn default() -> Self {
        Self { e0_var: 1.0, mu0_mean: 0.0, mu0_var: 10.0 }
    }
}

/// `Y_n = mu_n + phi (Y_{n-1} - mu_{n-1}) + sigma V_{n,1}`, `mu_n = mu_{n-1} + sigma X_n V_{n,2}`
/// with `X_n ∈ {0, 1}` and state `z_n = [Y_n - mu_n, mu_n]`.
///
/// Parameters: `phi` (|phi| ≤ 1), `sigma2`, and the transition matrix.
pub fn autoregression_shifting_level(cfg: &AutoregressionConfig) -> ModelSpec {
    let matrices: MatrixFn = Arc::new(|theta: &Theta, x: usize| {
        let phi = theta.get("phi")?;
        let sigma = positive(theta, "sigma2")?.sqrt();
        Ok(SystemMatrices::new(
            diag(&[phi, 1.0]),
            diag(&[sigma, sigma * x as f64]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(1, 1),
        ))
    });
    ModelSpec::new(
        "autoregression",
        2,
        matrices,
        DVector::from_row_slice(&[0.0, cfg.mu0_mean]),
        diag(&[cfg.e0_var, cfg.mu0_var]),
    )
    .expect("valid built-in model")
    .with_constraint(ParamConstraint::Interval { name: "phi".into(), lower: -1.0, upper: 1.0 })
    .with_constraint(ParamConstraint::Positive("sigma2".into()))
    .with_conjugate(Arc::new(AutoregressionRule))
}

/// `phi = 0.1`, `sigma = 0.1` and `P_X = [0.99 0.01; 0.99 0.01]`.
pub fn autoregression_true_theta() -> Theta {
    Theta::new(
        [("phi", 0.1), ("sigma2", 0.01)],
        Some(TransitionParam::Explicit(DMatrix::from_row_slice(2, 2, &[0.99, 0.01, 0.99, 0.01]))),
    )
    .expect("valid parameter")
}

/// `phi ~ N(0, 10)` on `[-1, 1]`, `sigma2 ~ IG(0.1, 0.1)`, flat Dirichlet rows.
pub fn autoregression_priors() -> PriorSpec {
    PriorSpec::new()
        .with("phi", Prior::truncated_gaussian(0.0, 10.0, -1.0, 1.0))
        .and_then(|p| p.with("sigma2", Prior::InverseGamma { shape: 0.1, scale: 0.1 }))
        .and_then(|p| p.with_dirichlet(flat_dirichlet(2)))
        .expect("valid priors")
}

/// Gaussian walk (std 0.1) on `phi`, log-Gaussian walks (log-std 0.05) on `sigma2`
/// and, unless `P_X` is integrated out, on every unnormalised transition weight.
pub fn autoregression_proposal(sample_transition: bool) -> ProposalSpec {
    let mut moves = vec![
        (Target::Param("phi".into()), Move::GaussianWalk { std: 0.1 }),
        (Target::Param("sigma2".into()), Move::LogGaussianWalk { std: 0.05 }),
    ];
    if sample_transition {
        moves.push((Target::TransitionWeights, Move::LogGaussianWalk { std: 0.05 }));
    }
    ProposalSpec::single(moves).expect("valid proposal")
}

struct AutoregressionRule;

impl ConjugateRule for AutoregressionRule {
    fn needs_continuous_state(&self) -> bool {
        true
    }

    fn update(&self, input: &ConjugateInput<'_>, rng: &mut dyn RngCore) -> Result<Theta> {
        let z = input.continuous()?;
        let mut theta = input.theta.clone();
        let sigma2 = theta.get("sigma2")?;

        if let Some(prior) = input.priors.get("phi") {
            let Prior::Gaussian { mean, var, lower, upper } = *prior else {
                return Err(Error::InvalidArgument("conjugate update of `phi` needs a Gaussian prior".into()));
            };
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for w in z.windows(2) {
                sxx += w[0][0] * w[0][0];
                sxy += w[0][0] * w[1][0];
            }
            let prec = 1.0 / var + sxx / sigma2;
            let m = (mean / var + sxy / sigma2) / prec;
            theta.set("phi", sample_truncated_gaussian(m, 1.0 / prec, lower, upper, rng)?);
        }

        let phi = theta.get("phi")?;
        let mut ss = 0.0;
        let mut k = 0;
        for (n, &x) in input.path.iter().enumerate() {
            let (prev, cur) = (&z[n], &z[n + 1]);
            ss += (cur[0] - phi * prev[0]).powi(2);
            k += 1;
            if x != 0 {
                ss += ((cur[1] - prev[1]) / x as f64).powi(2);
                k += 1;
            }
        }
        update_variance(&mut theta, input.priors, "sigma2", ss, k, rng)?;
        update_transition(&mut theta, input.priors, input.path, rng)?;
        Ok(theta)
    }
}

/// Settings of the well-log change-point model.
#[derive(Clone, Debug, PartialEq)]
pub struct WellLogConfig {
    pub delta: f64,
    pub init_mean: [f64; 2],
    pub init_var: [f64; 2],
}

impl Default for WellLogConfig {
    fn default() -> Self {
        Self { delta: 0.1, init_mean: [0.0, 0.0], init_var: [100.0, 100.0] }
    }
}

/// Piecewise-linear latent level `z_n = [mu_n, mu'_n]` observed in noise.
///
/// State 0 continues the current line, state 1 resets the gradient, state 2
/// resets level and gradient. Parameters: `sigma2_y`, `sigma2_mu0`, `sigma2_mu1`
/// and the 3x3 transition matrix.
pub fn well_log(cfg: &WellLogConfig) -> ModelSpec {
    let delta = cfg.delta;
    let matrices: MatrixFn = Arc::new(move |theta: &Theta, x: usize| {
        let sy = positive(theta, "sigma2_y")?.sqrt();
        let s0 = positive(theta, "sigma2_mu0")?.sqrt();
        let s1 = positive(theta, "sigma2_mu1")?.sqrt();
        let (a, b) = match x {
            0 => (DMatrix::from_row_slice(2, 2, &[1.0, delta, 0.0, 1.0]), diag(&[0.0, 0.0])),
            1 => (DMatrix::from_row_slice(2, 2, &[1.0, delta, 0.0, 0.0]), diag(&[0.0, s1])),
            _ => (DMatrix::zeros(2, 2), diag(&[s0, s1])),
        };
        Ok(SystemMatrices::new(
            a,
            b,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_element(1, 1, sy),
        ))
    });
    ModelSpec::new(
        "well-log",
        3,
        matrices,
        DVector::from_row_slice(&cfg.init_mean),
        diag(&cfg.init_var),
    )
    .expect("valid built-in model")
    .with_constraint(ParamConstraint::Positive("sigma2_y".into()))
    .with_constraint(ParamConstraint::Positive("sigma2_mu0".into()))
    .with_constraint(ParamConstraint::Positive("sigma2_mu1".into()))
    .with_conjugate(Arc::new(WellLogRule))
}

/// Independent `IG(2, 3)` priors on the three variances and flat Dirichlet rows.
pub fn well_log_priors() -> PriorSpec {
    let ig = Prior::InverseGamma { shape: 2.0, scale: 3.0 };
    PriorSpec::new()
        .with("sigma2_y", ig.clone())
        .and_then(|p| p.with("sigma2_mu0", ig.clone()))
        .and_then(|p| p.with("sigma2_mu1", ig))
        .and_then(|p| p.with_dirichlet(flat_dirichlet(3)))
        .expect("valid priors")
}

struct WellLogRule;

impl ConjugateRule for WellLogRule {
    fn needs_continuous_state(&self) -> bool {
        true
    }

    fn update(&self, input: &ConjugateInput<'_>, rng: &mut dyn RngCore) -> Result<Theta> {
        let z = input.continuous()?;
        let mut theta = input.theta.clone();
        let (mut ss_y, mut ss0, mut ss1) = (0.0, 0.0, 0.0);
        let (mut k0, mut k1) = (0, 0);
        for (n, &x) in input.path.iter().enumerate() {
            // States 1 and 2 reset the gradient (and level) to pure noise.
            let cur = &z[n + 1];
            ss_y += (input.y[n][0] - cur[0]).powi(2);
            match x {
                0 => {}
                1 => {
                    ss1 += cur[1].powi(2);
                    k1 += 1;
                }
                _ => {
                    ss0 += cur[0].powi(2);
                    ss1 += cur[1].powi(2);
                    k0 += 1;
                    k1 += 1;
                }
            }
        }
        update_variance(&mut theta, input.priors, "sigma2_y", ss_y, input.path.len(), rng)?;
        update_variance(&mut theta, input.priors, "sigma2_mu0", ss0, k0, rng)?;
        update_variance(&mut theta, input.priors, "sigma2_mu1", ss1, k1, rng)?;
        update_transition(&mut theta, input.priors, input.path, rng)?;
        Ok(theta)
    }
}

/// Settings of the exchange-rate model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeRateConfig {
    pub init_mean: [f64; 3],
    pub init_var: [f64; 3],
}

impl Default for ExchangeRateConfig {
    fn default() -> Self {
        Self { init_mean: [0.0, 0.0, 0.0], init_var: [1.0, 0.01, 0.01] }
    }
}

/// Names of the four switching innovation variances.
pub const ETA_VARIANCES: [&str; 4] = ["sigma2_eta1", "sigma2_eta2", "sigma2_eta3", "sigma2_eta4"];

/// Random-walk level observed in AR(2) noise whose innovation variance switches
/// between four values; `z_n = [mu_n, eta_n, eta_{n-1}]`.
///
/// Parameters: `sigma2_mu`, `sigma2_eta1..4`, `a1`, `a2` (stationary AR(2)) and the
/// 4x4 transition matrix.
pub fn exchange_rate(cfg: &ExchangeRateConfig) -> ModelSpec {
    let matrices: MatrixFn = Arc::new(|theta: &Theta, x: usize| {
        let (a1, a2) = (theta.get("a1")?, theta.get("a2")?);
        let s_mu = positive(theta, "sigma2_mu")?.sqrt();
        let s_eta = positive(theta, ETA_VARIANCES[x])?.sqrt();
        Ok(SystemMatrices::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, a1, a2, 0.0, 1.0, 0.0]),
            diag(&[s_mu, s_eta, 0.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]),
            DMatrix::zeros(1, 1),
        ))
    });
    let mut spec = ModelSpec::new(
        "exchange-rate",
        4,
        matrices,
        DVector::from_row_slice(&cfg.init_mean),
        diag(&cfg.init_var),
    )
    .expect("valid built-in model")
    .with_constraint(ParamConstraint::Positive("sigma2_mu".into()))
    .with_constraint(ParamConstraint::Ar2Stationary { a1: "a1".into(), a2: "a2".into() });
    for name in ETA_VARIANCES {
        spec = spec.with_constraint(ParamConstraint::Positive(name.into()));
    }
    spec
}

/// Parameter used to simulate exchange-rate test data.
pub fn exchange_rate_true_theta() -> Theta {
    let p = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.97 } else { 0.01 });
    Theta::new(
        [
            ("sigma2_mu", 1e-5),
            ("sigma2_eta1", 1e-5),
            ("sigma2_eta2", 1e-4),
            ("sigma2_eta3", 1e-3),
            ("sigma2_eta4", 1e-2),
            ("a1", 0.6),
            ("a2", 0.2),
        ],
        Some(TransitionParam::Explicit(p)),
    )
    .expect("valid parameter")
}

/// `IG(2, 1e-4)` on every variance, uniform `(a1, a2)` over the AR(2) stationarity
/// triangle and flat Dirichlet rows (as `Gamma(1, 1)` on unnormalised weights).
pub fn exchange_rate_priors() -> PriorSpec {
    let ig = Prior::InverseGamma { shape: 2.0, scale: 1e-4 };
    let mut p = PriorSpec::new()
        .with("sigma2_mu", ig.clone())
        .and_then(|p| p.with("a1", Prior::Uniform { lower: -2.0, upper: 2.0 }))
        .and_then(|p| p.with("a2", Prior::Uniform { lower: -1.0, upper: 1.0 }))
        .and_then(|p| p.with_dirichlet(flat_dirichlet(4)))
        .expect("valid priors");
    for name in ETA_VARIANCES {
        p = p.with(name, ig.clone()).expect("valid priors");
    }
    p
}

/// Two blocks tried in turn: `(a1, a2, sigma2_mu)` with Gaussian walks of std
/// 0.001 and a log-walk of log-std 0.01, then the four `sigma2_eta` values and the
/// unnormalised transition weights with the log-domain mixture
/// `0.9 N(0, 0.05²) + 0.1 N(0, 1)`.
pub fn exchange_rate_proposal() -> ProposalSpec {
    let mixture = Move::LogGaussianMixture(vec![(0.9, 0.05), (0.1, 1.0)]);
    let first = Block::new(vec![
        (Target::Param("a1".into()), Move::GaussianWalk { std: 0.001 }),
        (Target::Param("a2".into()), Move::GaussianWalk { std: 0.001 }),
        (Target::Param("sigma2_mu".into()), Move::LogGaussianWalk { std: 0.01 }),
    ])
    .expect("valid block");
    let mut moves: Vec<(Target, Move)> =
        ETA_VARIANCES.iter().map(|n| (Target::Param((*n).into()), mixture.clone())).collect();
    moves.push((Target::TransitionWeights, mixture));
    let second = Block::new(moves).expect("valid block");
    ProposalSpec::new(vec![first, second]).expect("valid proposal")
}

/// Settings of the scalar toy model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSwitchingConfig {
    /// Per-state autoregressive coefficient.
    pub a: Vec<f64>,
    /// Per-state process-noise standard deviation.
    pub b: Vec<f64>,
    pub init_mean: f64,
    pub init_var: f64,
}

impl Default for ScalarSwitchingConfig {
    fn default() -> Self {
        Self { a: vec![0.9, 0.5], b: vec![0.3, 1.5], init_mean: 0.0, init_var: 1.0 }
    }
}

/// `z_n = a[x_n] z_{n-1} + b[x_n] V_n`, `y_n = z_n + sqrt(sigma2) W_n`.
pub fn scalar_switching(cfg: &ScalarSwitchingConfig) -> Result<ModelSpec> {
    if cfg.a.len() != cfg.b.len() {
        return Err(Error::InvalidModel("`a` and `b` must list one value per state".into()));
    }
    let (a, b) = (cfg.a.clone(), cfg.b.clone());
    let matrices: MatrixFn = Arc::new(move |theta: &Theta, x: usize| {
        let sd = positive(theta, "sigma2")?.sqrt();
        Ok(SystemMatrices::new(
            DMatrix::from_element(1, 1, a[x]),
            DMatrix::from_element(1, 1, b[x]),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, sd),
        ))
    });
    Ok(ModelSpec::new(
        "scalar-switching",
        cfg.a.len(),
        matrices,
        DVector::from_element(1, cfg.init_mean),
        DMatrix::from_element(1, 1, cfg.init_var),
    )?
    .with_constraint(ParamConstraint::Positive("sigma2".into()))
    .with_conjugate(Arc::new(ScalarSwitchingRule)))
}

struct ScalarSwitchingRule;

impl ConjugateRule for ScalarSwitchingRule {
    fn needs_continuous_state(&self) -> bool {
        true
    }

    fn update(&self, input: &ConjugateInput<'_>, rng: &mut dyn RngCore) -> Result<Theta> {
        let z = input.continuous()?;
        let mut theta = input.theta.clone();
        let ss: f64 = input.y.iter().zip(&z[1..]).map(|(y, z)| (y[0] - z[0]).powi(2)).sum();
        update_variance(&mut theta, input.priors, "sigma2", ss, input.y.len(), rng)?;
        update_transition(&mut theta, input.priors, input.path, rng)?;
        Ok(theta)
    }
}
