//! Switching linear-Gaussian state-space models.
//!
//! A discrete process `X_n ∈ {0, .., K-1}` evolves according to an initial law and
//! a (possibly history-dependent) transition law. Conditionally on it, the
//! continuous state follows
//!
//! ```text
//! Z_n = A(X_n) Z_{n-1} + B(X_n) V_n + F(X_n) u_n
//! Y_n = C(X_n) Z_n     + D(X_n) W_n + G(X_n) u_n
//! ```
//!
//! with `Z_0 ~ N(m0, Σ0)` and standard Gaussian `V_n`, `W_n`. States are labelled
//! from zero; paths of equal length are ordered lexicographically.

pub mod builtin;
mod transition;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::math::psd_sqrt;
use crate::samplers::conjugate::ConjugateRule;

pub use transition::{HistoryTransitionFn, PathStats, Suffix, TransitionLaw};

const ROW_SUM_TOL: f64 = 1e-9;

/// Transition-matrix component of a parameter value.
#[derive(Clone, Debug, PartialEq)]
pub enum TransitionParam {
    /// Row-stochastic matrix `P_X`.
    Explicit(DMatrix<f64>),
    /// Positive unnormalised weights; `P_X` is obtained by normalising each row.
    Unnormalized(DMatrix<f64>),
    /// `P_X` integrated out under independent Dirichlet rows with these pseudo-counts.
    Marginalized { alpha: DMatrix<f64> },
}

/// How a sampler handles the transition matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionTreatment {
    Explicit,
    Unnormalized,
    Marginalized,
}

impl TransitionParam {
    /// Re-expresses `P_X` under another treatment. Unnormalised weights start
    /// equal to the probabilities; a marginalised matrix takes the pseudo-counts
    /// `alpha` and cannot be converted back.
    pub fn with_treatment(&self, treatment: TransitionTreatment, alpha: &DMatrix<f64>) -> Result<Self> {
        let out = match treatment {
            TransitionTreatment::Marginalized => Self::Marginalized { alpha: alpha.clone() },
            TransitionTreatment::Explicit | TransitionTreatment::Unnormalized => {
                let p = self
                    .probabilities()
                    .ok_or_else(|| Error::InvalidArgument("P_X is integrated out and has no value".into()))?;
                if treatment == TransitionTreatment::Explicit {
                    Self::Explicit(p)
                } else {
                    Self::Unnormalized(p.map(|v| v.max(f64::MIN_POSITIVE)))
                }
            }
        };
        out.validate()?;
        Ok(out)
    }

    /// The transition matrix, if it is not integrated out.
    pub fn probabilities(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::Explicit(p) => Some(p.clone()),
            Self::Unnormalized(w) => {
                let mut p = w.clone();
                for mut row in p.row_iter_mut() {
                    let s: f64 = row.iter().sum();
                    row /= s;
                }
                Some(p)
            }
            Self::Marginalized { .. } => None,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            Self::Explicit(m) | Self::Unnormalized(m) | Self::Marginalized { alpha: m } => m.nrows(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = match self {
            Self::Explicit(m) | Self::Unnormalized(m) | Self::Marginalized { alpha: m } => m,
        };
        if m.nrows() != m.ncols() || m.nrows() < 2 {
            return invalid(format!(
                "transition matrix must be square with at least 2 states, got {}x{}",
                m.nrows(),
                m.ncols()
            ));
        }
        match self {
            Self::Explicit(p) => {
                for (i, row) in p.row_iter().enumerate() {
                    if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                        return invalid(format!("row {i} of P_X has entries outside [0, 1]"));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > ROW_SUM_TOL {
                        return invalid(format!("row {i} of P_X sums to {s}, not 1"));
                    }
                }
            }
            Self::Unnormalized(w) => {
                if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return invalid("unnormalised transition weights must be positive and finite");
                }
            }
            Self::Marginalized { alpha } => {
                if alpha.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return invalid("Dirichlet pseudo-counts must be positive and finite");
                }
            }
        }
        Ok(())
    }
}

/// A static parameter value: named real parameters plus the transition component.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Theta {
    params: BTreeMap<String, f64>,
    transition: Option<TransitionParam>,
}

impl Theta {
    pub fn new<I, S>(params: I, transition: Option<TransitionParam>) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let params: BTreeMap<String, f64> = params.into_iter().map(|(k, v)| (k.into(), v)).collect();
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return invalid(format!("parameter {k} is not finite ({v})"));
        }
        if let Some(t) = &transition {
            t.validate()?;
        }
        Ok(Self { params, transition })
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.params.insert(name.to_string(), value);
    }

    pub fn transition(&self) -> Option<&TransitionParam> {
        self.transition.as_ref()
    }

    pub fn set_transition(&mut self, t: TransitionParam) -> Result<()> {
        t.validate()?;
        self.transition = Some(t);
        Ok(())
    }

    pub fn transition_mut(&mut self) -> Option<&mut TransitionParam> {
        self.transition.as_mut()
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }
}

/// The six system matrices for one discrete state.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl SystemMatrices {
    /// Matrices without exogenous inputs (`F`, `G` have zero columns).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        let (nz, ny) = (a.nrows(), c.nrows());
        Self {
            a,
            b,
            c,
            d,
            f: DMatrix::zeros(nz, 0),
            g: DMatrix::zeros(ny, 0),
        }
    }

    pub fn with_inputs(mut self, f: DMatrix<f64>, g: DMatrix<f64>) -> Self {
        self.f = f;
        self.g = g;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.f.ncols()
    }

    fn validate(&self, state: usize) -> Result<()> {
        let nz = self.a.nrows();
        let ny = self.c.nrows();
        let checks = [
            ("A", self.a.ncols() == nz),
            ("B", self.b.nrows() == nz),
            ("C", self.c.ncols() == nz),
            ("D", self.d.nrows() == ny),
            ("F", self.f.nrows() == nz),
            ("G", self.g.nrows() == ny && self.g.ncols() == self.f.ncols()),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::InvalidModel(format!(
                    "matrix {name} of state {state} has inconsistent dimensions"
                )));
            }
        }
        if nz == 0 || ny == 0 {
            return Err(Error::InvalidModel("state and observation dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter validity constraints checked whenever a model is bound to a parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamConstraint {
    Positive(String),
    Interval { name: String, lower: f64, upper: f64 },
    /// Stationarity region of an AR(2) recursion with coefficients `a1`, `a2`.
    Ar2Stationary { a1: String, a2: String },
}

impl ParamConstraint {
    pub fn is_satisfied(&self, theta: &Theta) -> Result<bool> {
        Ok(match self {
            Self::Positive(n) => theta.get(n)? > 0.0,
            Self::Interval { name, lower, upper } => {
                let v = theta.get(name)?;
                v >= *lower && v <= *upper
            }
            Self::Ar2Stationary { a1, a2 } => {
                let (a1, a2) = (theta.get(a1)?, theta.get(a2)?);
                a2.abs() < 1.0 && a1 + a2 < 1.0 && a2 - a1 < 1.0
            }
        })
    }
}

pub type MatrixFn = Arc<dyn Fn(&Theta, usize) -> Result<SystemMatrices> + Send + Sync>;
pub type InitialFn = Arc<dyn Fn(&Theta) -> Vec<f64> + Send + Sync>;

/// How the transition law is obtained from a parameter value.
#[derive(Clone)]
pub enum TransitionSpec {
    /// Use the transition component of [`Theta`].
    FromTheta,
    /// User-supplied `f_θ(·|x_{1:n-1})`.
    Custom(HistoryTransitionFn),
}

/// A switching state-space model family indexed by [`Theta`].
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    num_states: usize,
    matrices: MatrixFn,
    initial: Option<InitialFn>,
    transition: TransitionSpec,
    inputs: Option<Arc<Vec<DVector<f64>>>>,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
    constraints: Vec<ParamConstraint>,
    conjugate: Option<Arc<dyn ConjugateRule>>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("num_states", &self.num_states)
            .field("init_mean", &self.init_mean)
            .field("init_cov", &self.init_cov)
            .field("constraints", &self.constraints)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        num_states: usize,
        matrices: MatrixFn,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::InvalidModel(format!(
                "at least two discrete states are required, got {num_states}"
            )));
        }
        let n = init_mean.len();
        if init_cov.nrows() != n || init_cov.ncols() != n {
            return Err(Error::InvalidModel("initial covariance must be square and match the mean".into()));
        }
        let asym = (&init_cov - init_cov.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::InvalidModel("initial covariance is not symmetric".into()));
        }
        let (_, most_negative) = psd_sqrt(&init_cov);
        if most_negative < -1e-10 {
            return Err(Error::InvalidModel("initial covariance is not positive semi-definite".into()));
        }
        Ok(Self {
            name: name.into(),
            num_states,
            matrices,
            initial: None,
            transition: TransitionSpec::FromTheta,
            inputs: None,
            init_mean,
            init_cov,
            constraints: Vec::new(),
            conjugate: None,
        })
    }

    /// Initial law `ν_θ`; uniform when not set.
    pub fn with_initial(mut self, initial: InitialFn) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn with_transition(mut self, transition: TransitionSpec) -> Self {
        self.transition = transition;
        self
    }

    pub fn with_inputs(mut self, inputs: Vec<DVector<f64>>) -> Self {
        self.inputs = Some(Arc::new(inputs));
        self
    }

    pub fn with_constraint(mut self, c: ParamConstraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_conjugate(mut self, rule: Arc<dyn ConjugateRule>) -> Self {
        self.conjugate = Some(rule);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn state_dim(&self) -> usize {
        self.init_mean.len()
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &DMatrix<f64> {
        &self.init_cov
    }

    pub fn constraints(&self) -> &[ParamConstraint] {
        &self.constraints
    }

    pub fn conjugate_rule(&self) -> Option<&Arc<dyn ConjugateRule>> {
        self.conjugate.as_ref()
    }

    pub fn transition_spec(&self) -> &TransitionSpec {
        &self.transition
    }

    pub fn matrices(&self, theta: &Theta, x: usize) -> Result<SystemMatrices> {
        (self.matrices)(theta, x)
    }

    /// Checks the declared parameter constraints.
    pub fn check_theta(&self, theta: &Theta) -> Result<()> {
        for c in &self.constraints {
            if !c.is_satisfied(theta)? {
                return invalid(format!("parameter constraint violated: {c:?}"));
            }
        }
        if let Some(t) = theta.transition() {
            t.validate()?;
            if t.num_states() != self.num_states {
                return invalid(format!(
                    "transition component has {} states, model has {}",
                    t.num_states(),
                    self.num_states
                ));
            }
        }
        Ok(())
    }

    /// Resolves the model at a parameter value, caching matrices and transition law.
    pub fn bind(&self, theta: &Theta) -> Result<BoundModel<'_>> {
        self.check_theta(theta)?;
        let mut systems = Vec::with_capacity(self.num_states);
        for x in 0..self.num_states {
            let m = self.matrices(theta, x)?;
            m.validate(x)?;
            if m.state_dim() != self.state_dim() {
                return Err(Error::InvalidModel(format!(
                    "state {x}: A is {}x{} but the initial mean has length {}",
                    m.a.nrows(),
                    m.a.ncols(),
                    self.state_dim()
                )));
            }
            if let Some(first) = systems.first() {
                let first: &BoundSystem = first;
                let m0 = &first.m;
                if m.b.ncols() != m0.b.ncols()
                    || m.obs_dim() != m0.obs_dim()
                    || m.d.ncols() != m0.d.ncols()
                    || m.input_dim() != m0.input_dim()
                {
                    return Err(Error::InvalidModel(format!(
                        "state {x} has matrix dimensions inconsistent with state 0"
                    )));
                }
            }
            systems.push(BoundSystem::new(m));
        }
        let input_dim = systems[0].m.input_dim();
        if input_dim > 0 {
            match &self.inputs {
                Some(u) if u.iter().all(|v| v.len() == input_dim) => {}
                Some(_) => return Err(Error::InvalidModel("input vectors have the wrong length".into())),
                None => {
                    return Err(Error::InvalidModel(
                        "model has F/G input matrices but no input sequence".into(),
                    ))
                }
            }
        }

        let initial = match &self.initial {
            Some(f) => f(theta),
            None => vec![1.0 / self.num_states as f64; self.num_states],
        };
        if initial.len() != self.num_states || initial.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidModel("initial law must be a probability vector over the states".into()));
        }
        let s: f64 = initial.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("initial law sums to {s}")));
        }

        let law = match &self.transition {
            TransitionSpec::Custom(f) => TransitionLaw::History {
                f: Arc::clone(f),
                theta: theta.clone(),
                num_states: self.num_states,
            },
            TransitionSpec::FromTheta => match theta.transition() {
                Some(TransitionParam::Marginalized { alpha }) => TransitionLaw::Polya {
                    row_totals: alpha.row_iter().map(|r| r.sum()).collect(),
                    alpha: alpha.clone(),
                },
                Some(t) => {
                    let p = t.probabilities().expect("explicit transition");
                    TransitionLaw::Markov { log_p: p.map(f64::ln) }
                }
                None => {
                    return invalid("parameter has no transition component and the model no custom law")
                }
            },
        };

        Ok(BoundModel {
            spec: self,
            theta: theta.clone(),
            systems,
            log_initial: initial.iter().map(|p| p.ln()).collect(),
            law,
            zero_input: DVector::zeros(input_dim),
        })
    }
}

/// System matrices with the noise covariances `BBᵀ` and `DDᵀ` precomputed.
#[derive(Clone, Debug)]
pub struct BoundSystem {
    pub m: SystemMatrices,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl BoundSystem {
    fn new(m: SystemMatrices) -> Self {
        let q = &m.b * m.b.transpose();
        let r = &m.d * m.d.transpose();
        Self { m, q, r }
    }
}

/// A model evaluated at a fixed parameter value.
#[derive(Clone, Debug)]
pub struct BoundModel<'a> {
    spec: &'a ModelSpec,
    theta: Theta,
    systems: Vec<BoundSystem>,
    log_initial: Vec<f64>,
    law: TransitionLaw,
    zero_input: DVector<f64>,
}

impl<'a> BoundModel<'a> {
    pub fn spec(&self) -> &'a ModelSpec {
        self.spec
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn num_states(&self) -> usize {
        self.systems.len()
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.systems[0].m.obs_dim()
    }

    pub fn system(&self, x: usize) -> &BoundSystem {
        &self.systems[x]
    }

    pub fn log_initial(&self) -> &[f64] {
        &self.log_initial
    }

    pub fn law(&self) -> &TransitionLaw {
        &self.law
    }

    /// Exogenous input `u_n` for one-based time `n` (a zero-length vector when unused).
    pub fn input(&self, n: usize) -> &DVector<f64> {
        match &self.spec.inputs {
            Some(u) if !self.zero_input.is_empty() => u.get(n - 1).unwrap_or(&self.zero_input),
            _ => &self.zero_input,
        }
    }

    /// Fails unless observations are scalar.
    pub fn require_scalar_observations(&self, what: &str) -> Result<()> {
        if self.obs_dim() != 1 {
            return Err(Error::Unsupported(format!(
                "{what} requires scalar observations, model has dimension {}",
                self.obs_dim()
            )));
        }
        Ok(())
    }

    /// Log prior probability of a whole discrete path.
    pub fn log_path_prior(&self, path: &[usize]) -> f64 {
        self.law.log_path_prob(&self.log_initial, path)
    }

    pub fn check_path(&self, path: &[usize]) -> Result<()> {
        if let Some(&x) = path.iter().find(|&&x| x >= self.num_states()) {
            return invalid(format!("state {x} out of range for {} states", self.num_states()));
        }
        Ok(())
    }
}

/// A realisation of the discrete, continuous and observed processes.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub discrete: Vec<usize>,
    /// `z_0, .., z_T` when simulated.
    pub continuous: Option<Vec<DVector<f64>>>,
    pub observations: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observations as plain numbers; only meaningful for scalar observations.
    pub fn scalar_observations(&self) -> Vec<f64> {
        self.observations.iter().map(|y| y[0]).collect()
    }
}

/// Wraps scalar observations as one-dimensional vectors.
pub fn scalar_observations(ys: &[f64]) -> Vec<DVector<f64>> {
    ys.iter().map(|&y| DVector::from_element(1, y)).collect()
}

/// `f_θ(x | history)`; with an empty history this is the initial law `ν_θ(x)`.
pub fn transition_prob(model: &ModelSpec, theta: &Theta, history: &[usize], x: usize) -> Result<f64> {
    let bound = model.bind(theta)?;
    bound.check_path(history)?;
    if x >= bound.num_states() {
        return invalid(format!("state {x} out of range for {} states", bound.num_states()));
    }
    let Some((&first, rest)) = history.split_first() else {
        return Ok(bound.log_initial[x].exp());
    };
    let law = bound.law();
    let mut stats = law.initial_stats(first);
    let mut last = first;
    for &h in rest {
        stats = law.extend(&stats, last, h);
        last = h;
    }
    Ok(law.log_prob(&stats, last, x).exp())
}

fn draw_gaussian(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn draw_categorical_log(rng: &mut impl Rng, log_p: impl Iterator<Item = f64>) -> usize {
    let probs: Vec<f64> = log_p.map(f64::exp).collect();
    crate::math::categorical_index(&probs, rng.random::<f64>()).unwrap_or(0)
}

/// Draws `(x_{1:T}, z_{0:T}, y_{1:T})` from the model; a pure function of its arguments.
pub fn simulate(model: &ModelSpec, theta: &Theta, len: usize, seed: u64) -> Result<Trajectory> {
    if len == 0 {
        return invalid("simulation length must be at least 1");
    }
    let bound = model.bind(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = bound.num_states();
    let law = bound.law();

    let mut discrete = Vec::with_capacity(len);
    let x1 = draw_categorical_log(&mut rng, bound.log_initial.iter().copied());
    discrete.push(x1);
    let mut stats = law.initial_stats(x1);
    for _ in 1..len {
        let last = *discrete.last().unwrap();
        let x = draw_categorical_log(&mut rng, (0..k).map(|j| law.log_prob(&stats, last, j)));
        stats = law.extend(&stats, last, x);
        discrete.push(x);
    }

    let (root, _) = psd_sqrt(model.init_cov());
    let mut z = model.init_mean() + root * draw_gaussian(&mut rng, model.state_dim());
    let mut continuous = Vec::with_capacity(len + 1);
    continuous.push(z.clone());
    let mut observations = Vec::with_capacity(len);
    for (i, &x) in discrete.iter().enumerate() {
        let sys = &bound.system(x).m;
        let u = bound.input(i + 1);
        let v = draw_gaussian(&mut rng, sys.b.ncols());
        let w = draw_gaussian(&mut rng, sys.d.ncols());
        z = &sys.a * &z + &sys.b * v + &sys.f * u;
        let y = &sys.c * &z + &sys.d * w + &sys.g * u;
        continuous.push(z.clone());
        observations.push(y);
    }
    Ok(Trajectory {
        discrete,
        continuous: Some(continuous),
        observations,
    })
}
