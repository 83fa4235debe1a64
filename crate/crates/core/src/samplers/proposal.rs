use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::model::{Theta, TransitionParam};

/// What a move acts on.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Param(String),
    /// Every entry of the unnormalised transition weights, moved independently.
    TransitionWeights,
}

/// A single-coordinate random move.
#[derive(Clone, Debug, PartialEq)]
pub enum Move {
    GaussianWalk { std: f64 },
    /// Gaussian walk on `ln x`.
    LogGaussianWalk { std: f64 },
    /// Mixture of log-domain Gaussian walks, `(weight, std)` per component.
    LogGaussianMixture(Vec<(f64, f64)>),
    /// Independent uniform draw from a finite set of values.
    Grid(Vec<f64>),
}

impl Move {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::GaussianWalk { std } | Self::LogGaussianWalk { std } => *std > 0.0,
            Self::LogGaussianMixture(c) => {
                let total: f64 = c.iter().map(|(w, _)| w).sum();
                !c.is_empty()
                    && c.iter().all(|&(w, s)| w > 0.0 && s > 0.0)
                    && (total - 1.0).abs() < 1e-12
            }
            Self::Grid(v) => !v.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid proposal move {self:?}"))
        }
    }

    /// Draws a new value and returns it with `log q(old|new) - log q(new|old)`.
    pub fn propose<R: Rng + ?Sized>(&self, old: f64, rng: &mut R) -> (f64, f64) {
        match self {
            Self::GaussianWalk { std } => (old + std * rng.sample::<f64, _>(StandardNormal), 0.0),
            Self::LogGaussianWalk { std } => log_walk(old, *std, rng),
            Self::LogGaussianMixture(components) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut std = components[components.len() - 1].1;
                for &(w, s) in components {
                    acc += w;
                    if u < acc {
                        std = s;
                        break;
                    }
                }
                // The mixture kernel is symmetric in ln x, so only the Jacobian remains.
                log_walk(old, std, rng)
            }
            Self::Grid(values) => (values[rng.random_range(0..values.len())], 0.0),
        }
    }
}

fn log_walk<R: Rng + ?Sized>(old: f64, std: f64, rng: &mut R) -> (f64, f64) {
    let new = old * (std * rng.sample::<f64, _>(StandardNormal)).exp();
    (new, new.ln() - old.ln())
}

/// One Metropolis-within-Gibbs block: the moves are applied jointly and accepted
/// or rejected together.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Block {
    pub moves: Vec<(Target, Move)>,
}

impl Block {
    pub fn new(moves: Vec<(Target, Move)>) -> Result<Self> {
        if moves.is_empty() {
            return invalid("a proposal block needs at least one move");
        }
        for (_, m) in &moves {
            m.validate()?;
        }
        Ok(Self { moves })
    }

    /// Proposes `θ*` and returns it with `log q(θ|θ*) - log q(θ*|θ)`.
    pub fn propose<R: Rng + ?Sized>(&self, theta: &Theta, rng: &mut R) -> Result<(Theta, f64)> {
        let mut new = theta.clone();
        let mut log_ratio = 0.0;
        for (target, mv) in &self.moves {
            match target {
                Target::Param(name) => {
                    let (v, lr) = mv.propose(theta.get(name)?, rng);
                    new.set(name, v);
                    log_ratio += lr;
                }
                Target::TransitionWeights => {
                    let Some(TransitionParam::Unnormalized(w)) = new.transition_mut() else {
                        return Err(Error::InvalidArgument(
                            "transition-weight moves need an unnormalised transition component".into(),
                        ));
                    };
                    for v in w.iter_mut() {
                        let (nv, lr) = mv.propose(*v, rng);
                        *v = nv;
                        log_ratio += lr;
                    }
                }
            }
        }
        Ok((new, log_ratio))
    }
}

/// Sequence of blocks; one sampler iteration visits every block once in order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProposalSpec {
    pub blocks: Vec<Block>,
}

impl ProposalSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return invalid("proposal needs at least one block");
        }
        Ok(Self { blocks })
    }

    pub fn single(moves: Vec<(Target, Move)>) -> Result<Self> {
        Self::new(vec![Block::new(moves)?])
    }
}
