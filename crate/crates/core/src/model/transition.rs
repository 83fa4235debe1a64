//! Laws of the discrete switching process and the per-path statistics they need.
//!
//! Three laws are supported: an explicit Markov transition matrix, the Pólya-urn
//! predictive obtained by integrating a Dirichlet-distributed matrix out, and an
//! arbitrary history-dependent closure. Each law is evaluated through a
//! [`PathStats`] summary so that filters never have to rebuild full histories
//! for the first two.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use super::Theta;

/// Closure form of `f_θ(·|x_{1:n-1})`: returns a probability vector over states.
pub type HistoryTransitionFn = Arc<dyn Fn(&Theta, &[usize]) -> Vec<f64> + Send + Sync>;

/// Transition law resolved against a concrete parameter value.
#[derive(Clone)]
pub enum TransitionLaw {
    /// `log P[i, j]` for a row-stochastic matrix.
    Markov { log_p: DMatrix<f64> },
    /// Dirichlet pseudo-counts `alpha[i, j]` of the integrated-out matrix.
    Polya { alpha: DMatrix<f64>, row_totals: Vec<f64> },
    /// Arbitrary dependence on the whole history.
    History { f: HistoryTransitionFn, theta: Theta, num_states: usize },
}

impl fmt::Debug for TransitionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Markov { log_p } => f.debug_struct("Markov").field("log_p", log_p).finish(),
            Self::Polya { alpha, .. } => f.debug_struct("Polya").field("alpha", alpha).finish(),
            Self::History { num_states, .. } => f
                .debug_struct("History")
                .field("num_states", num_states)
                .finish(),
        }
    }
}

/// Sufficient statistic of a discrete prefix for its transition law.
#[derive(Clone, Debug, PartialEq)]
pub enum PathStats {
    /// Markov laws only need the last state, which particles carry anyway.
    Markov,
    /// Row-major `|X| x |X|` transition counts.
    Counts(Box<[u32]>),
    /// The full prefix.
    History(Vec<usize>),
}

/// A suffix `x'_{n+1:T}` accumulated backwards, with its internal transition counts.
#[derive(Clone, Debug)]
pub struct Suffix {
    reversed: Vec<usize>,
    counts: Vec<u32>,
    num_states: usize,
}

impl Suffix {
    pub fn new(num_states: usize, last: usize) -> Self {
        Self {
            reversed: vec![last],
            counts: vec![0; num_states * num_states],
            num_states,
        }
    }

    /// Prepends `x` so that it becomes the first state of the suffix.
    pub fn push_front(&mut self, x: usize) {
        let first = self.first();
        self.counts[x * self.num_states + first] += 1;
        self.reversed.push(x);
    }

    pub fn first(&self) -> usize {
        *self.reversed.last().expect("suffix is never empty")
    }

    pub fn len(&self) -> usize {
        self.reversed.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// States in forward time order.
    pub fn states(&self) -> Vec<usize> {
        self.reversed.iter().rev().copied().collect()
    }
}

impl TransitionLaw {
    pub fn num_states(&self) -> usize {
        match self {
            Self::Markov { log_p } => log_p.nrows(),
            Self::Polya { alpha, .. } => alpha.nrows(),
            Self::History { num_states, .. } => *num_states,
        }
    }

    pub fn initial_stats(&self, x1: usize) -> PathStats {
        match self {
            Self::Markov { .. } => PathStats::Markov,
            Self::Polya { alpha, .. } => {
                PathStats::Counts(vec![0; alpha.nrows() * alpha.nrows()].into_boxed_slice())
            }
            Self::History { .. } => PathStats::History(vec![x1]),
        }
    }

    /// `log f_θ(x | prefix)` where `last` is the final state of the prefix.
    pub fn log_prob(&self, stats: &PathStats, last: usize, x: usize) -> f64 {
        match (self, stats) {
            (Self::Markov { log_p }, _) => log_p[(last, x)],
            (Self::Polya { alpha, row_totals }, PathStats::Counts(c)) => {
                let k = alpha.nrows();
                let row = &c[last * k..(last + 1) * k];
                let total: u32 = row.iter().sum();
                ((alpha[(last, x)] + f64::from(row[x])) / (row_totals[last] + f64::from(total))).ln()
            }
            (Self::History { f, theta, .. }, PathStats::History(path)) => {
                f(theta, path).get(x).copied().unwrap_or(0.0).ln()
            }
            _ => panic!("path statistics do not match the transition law"),
        }
    }

    /// Statistics of the prefix extended by `x`.
    pub fn extend(&self, stats: &PathStats, last: usize, x: usize) -> PathStats {
        match stats {
            PathStats::Markov => PathStats::Markov,
            PathStats::Counts(c) => {
                let k = self.num_states();
                let mut c = c.clone();
                c[last * k + x] += 1;
                PathStats::Counts(c)
            }
            PathStats::History(path) => {
                let mut p = Vec::with_capacity(path.len() + 1);
                p.extend_from_slice(path);
                p.push(x);
                PathStats::History(p)
            }
        }
    }

    /// `log p_θ(x'_{n+1:T} | x_{1:n})` up to a term that does not depend on the prefix.
    ///
    /// The Markov law drops the transitions internal to the suffix; the other two
    /// laws return the exact value.
    pub fn log_suffix_prob(&self, stats: &PathStats, last: usize, suffix: &Suffix) -> f64 {
        let first = suffix.first();
        match (self, stats) {
            (Self::Markov { log_p }, _) => log_p[(last, first)],
            (Self::Polya { alpha, row_totals }, PathStats::Counts(c)) => {
                let k = alpha.nrows();
                let mut out = 0.0;
                for i in 0..k {
                    let junction = usize::from(i == last);
                    let added: u32 =
                        suffix.counts[i * k..(i + 1) * k].iter().sum::<u32>() + junction as u32;
                    if added == 0 {
                        continue;
                    }
                    let mut prefix_total = 0.0;
                    for j in 0..k {
                        let s = suffix.counts[i * k + j] + u32::from(i == last && j == first);
                        let base = alpha[(i, j)] + f64::from(c[i * k + j]);
                        prefix_total += f64::from(c[i * k + j]);
                        if s > 0 {
                            out += ln_gamma(base + f64::from(s)) - ln_gamma(base);
                        }
                    }
                    let base = row_totals[i] + prefix_total;
                    out -= ln_gamma(base + f64::from(added)) - ln_gamma(base);
                }
                out
            }
            (Self::History { f, theta, .. }, PathStats::History(path)) => {
                let mut history = path.clone();
                let mut out = 0.0;
                for x in suffix.states() {
                    let p = f(theta, &history).get(x).copied().unwrap_or(0.0);
                    out += p.ln();
                    if out == f64::NEG_INFINITY {
                        break;
                    }
                    history.push(x);
                }
                out
            }
            _ => panic!("path statistics do not match the transition law"),
        }
    }

    /// Exact log prior probability of a full path, including the initial law.
    pub fn log_path_prob(&self, log_initial: &[f64], path: &[usize]) -> f64 {
        let Some((&x1, rest)) = path.split_first() else {
            return 0.0;
        };
        let mut lp = log_initial[x1];
        let mut stats = self.initial_stats(x1);
        let mut last = x1;
        for &x in rest {
            if lp == f64::NEG_INFINITY {
                return lp;
            }
            lp += self.log_prob(&stats, last, x);
            stats = self.extend(&stats, last, x);
            last = x;
        }
        lp
    }

    /// Row-major transition counts of a full path.
    pub fn transition_counts(num_states: usize, path: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; num_states * num_states];
        for w in path.windows(2) {
            counts[w[0] * num_states + w[1]] += 1;
        }
        counts
    }

    /// Log Dirichlet-multinomial marginal of the transitions summarised in `counts`.
    pub fn polya_log_marginal(alpha: &DMatrix<f64>, counts: &[u32]) -> f64 {
        let k = alpha.nrows();
        let mut out = 0.0;
        for i in 0..k {
            let mut a_tot = 0.0;
            let mut c_tot = 0.0;
            for j in 0..k {
                let a = alpha[(i, j)];
                let c = f64::from(counts[i * k + j]);
                if c > 0.0 {
                    out += ln_gamma(a + c) - ln_gamma(a);
                }
                a_tot += a;
                c_tot += c;
            }
            if c_tot > 0.0 {
                out -= ln_gamma(a_tot + c_tot) - ln_gamma(a_tot);
            }
        }
        out
    }
}
