//! Chain execution and output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dpmcmc::dpf::{dpf_run_bound, sample_path};
use dpmcmc::model::builtin::ETA_VARIANCES;
use dpmcmc::model::{simulate, ModelSpec, Theta, TransitionParam};
use dpmcmc::samplers::prior::PriorSpec;
use dpmcmc::samplers::proposal::ProposalSpec;
use dpmcmc::samplers::{gerlach_step, pg_step, pmmh_init, pmmh_step, ChainState};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SamplerKind};
use crate::data::{ingest_series, write_series};
use crate::diagnostics::{summarize, ChainTable};

/// Random stream of chain `c`: ChaCha8 seeded with the master seed, stream `c`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Observations and, when simulated, the true path.
pub struct Dataset {
    pub y: Vec<DVector<f64>>,
    pub states: Option<Vec<usize>>,
    pub removed: usize,
}

pub fn load_data(cfg: &ExperimentConfig, spec: &ModelSpec) -> Result<Dataset> {
    if let Some(sim) = &cfg.data.simulate {
        let seed = sim.seed.unwrap_or(cfg.sampler.seed);
        let tr = simulate(spec, &cfg.true_theta()?, sim.length, seed)?;
        return Ok(Dataset { y: tr.observations, states: Some(tr.discrete), removed: 0 });
    }
    let path = cfg.data.path.as_ref().expect("validated");
    let path = if path.is_relative() { cfg.base_dir.join(path) } else { path.clone() };
    let series = ingest_series(&path, cfg.data.outlier_threshold)?;
    if series.removed > 0 {
        log::info!("removed {} outliers from {}", series.removed, path.display());
    }
    let y = series.values.iter().map(|&v| DVector::from_element(1, v)).collect();
    Ok(Dataset { y, states: None, removed: series.removed })
}

/// Writes simulated data and its true path into `out_dir`.
pub fn simulate_to(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if cfg.data.simulate.is_none() {
        bail!("`simulate` needs a [data.simulate] table in the config");
    }
    let spec = cfg.build_model()?;
    let data = load_data(cfg, &spec)?;
    std::fs::create_dir_all(out_dir)?;
    let series = out_dir.join("data.txt");
    let values: Vec<f64> = data.y.iter().map(|v| v[0]).collect();
    write_series(&series, &values)?;
    let states = out_dir.join("states.csv");
    let mut w = csv::Writer::from_path(&states)?;
    w.write_record(["n", "x"])?;
    for (n, x) in data.states.expect("simulated").iter().enumerate() {
        w.write_record([(n + 1).to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(vec![series, states])
}

/// One retained iteration.
struct Row {
    iteration: usize,
    theta: Theta,
    path: Vec<usize>,
    log_evidence: Option<f64>,
    accepted: Vec<bool>,
}

struct ChainOutput {
    rows: Vec<Row>,
    /// Per block; empty for the Gibbs samplers.
    acceptance: Vec<f64>,
    seconds: f64,
}

/// Orders the exchange-rate regimes by increasing volatility variance and
/// permutes the transition matrix and path to match.
fn relabel_by_variance(theta: &Theta, path: &[usize]) -> Result<(Theta, Vec<usize>)> {
    let vars: Vec<f64> = ETA_VARIANCES.iter().map(|n| theta.get(n)).collect::<dpmcmc::Result<_>>()?;
    let mut order: Vec<usize> = (0..vars.len()).collect();
    order.sort_by(|&a, &b| vars[a].total_cmp(&vars[b]));
    // order[new] = old
    let mut rank = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut out = theta.clone();
    for (new, &old) in order.iter().enumerate() {
        out.set(ETA_VARIANCES[new], vars[old]);
    }
    let permute = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(order[i], order[j])]);
    if let Some(t) = theta.transition() {
        let t = match t {
            TransitionParam::Explicit(p) => TransitionParam::Explicit(permute(p)),
            TransitionParam::Unnormalized(w) => TransitionParam::Unnormalized(permute(w)),
            TransitionParam::Marginalized { alpha } => TransitionParam::Marginalized { alpha: permute(alpha) },
        };
        out.set_transition(t)?;
    }
    Ok((out, path.iter().map(|&x| rank[x]).collect()))
}

fn initial_path<R: rand::Rng>(spec: &ModelSpec, theta: &Theta, y: &[DVector<f64>], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let run = dpf_run_bound(&spec.bind(theta)?, y, n, rng, false)?;
    Ok(sample_path(&run, rng))
}

fn run_chain(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    priors: &PriorSpec,
    proposal: &ProposalSpec,
    y: &[DVector<f64>],
    chain: usize,
) -> Result<ChainOutput> {
    let s = &cfg.sampler;
    let mut rng = chain_rng(s.seed, chain);
    let theta = cfg.initial_theta()?;
    let n = s.particles;
    let start = Instant::now();
    let mut rows = Vec::with_capacity((s.iterations - s.burn_in) / s.thin);
    let mut accepted_total = vec![0usize; proposal.blocks.len()];
    let gibbs_priors = if s.fix_parameters { PriorSpec::new() } else { priors.clone() };
    let mut keep = |i: usize, state: &ChainState, accepted: Vec<bool>| -> Result<()> {
        if i >= s.burn_in && (i - s.burn_in + 1).is_multiple_of(s.thin) {
            let (theta, path) = if cfg.relabel() {
                relabel_by_variance(&state.theta, &state.path)?
            } else {
                (state.theta.clone(), state.path.clone())
            };
            rows.push(Row { iteration: i + 1, theta, path, log_evidence: state.log_evidence, accepted });
        }
        Ok(())
    };
    match s.kind {
        SamplerKind::Pmmh => {
            let mut state = pmmh_init(spec, priors, theta, y, n, &mut rng)?;
            for i in 0..s.iterations {
                let out = pmmh_step(state, spec, priors, proposal, y, n, &mut rng)
                    .with_context(|| format!("chain {chain}, iteration {}", i + 1))?;
                if i >= s.burn_in {
                    for (a, &b) in accepted_total.iter_mut().zip(&out.accepted) {
                        *a += usize::from(b);
                    }
                }
                keep(i, &out.state, out.accepted)?;
                state = out.state;
            }
        }
        kind => {
            let path = initial_path(spec, &theta, y, n.max(2), &mut rng)?;
            let mut state = ChainState { theta, path, log_evidence: None, iteration: 0 };
            for i in 0..s.iterations {
                state = match kind {
                    SamplerKind::Pg => pg_step(state, spec, &gibbs_priors, y, n, &mut rng, true),
                    SamplerKind::PgNoBackward => pg_step(state, spec, &gibbs_priors, y, n, &mut rng, false),
                    _ => gerlach_step(state, spec, &gibbs_priors, y, &mut rng),
                }
                .with_context(|| format!("chain {chain}, iteration {}", i + 1))?;
                keep(i, &state, Vec::new())?;
            }
        }
    }
    let retained = (s.iterations - s.burn_in) as f64;
    let acceptance = if s.kind == SamplerKind::Pmmh {
        accepted_total.iter().map(|&a| a as f64 / retained).collect()
    } else {
        Vec::new()
    };
    Ok(ChainOutput { rows, acceptance, seconds: start.elapsed().as_secs_f64() })
}

/// Column names and values of a parameter, in a fixed order.
fn theta_columns(theta: &Theta) -> Vec<(String, f64)> {
    let mut cols: Vec<(String, f64)> = theta.params().iter().map(|(k, v)| (k.clone(), *v)).collect();
    if let Some(p) = theta.transition().and_then(TransitionParam::probabilities) {
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                cols.push((format!("p_{i}_{j}"), p[(i, j)]));
            }
        }
    }
    cols
}

fn write_chain(path: &Path, out: &ChainOutput, store_paths: bool) -> Result<ChainTable> {
    let first = &out.rows[0];
    let mut names = vec!["iteration".to_string()];
    names.extend(theta_columns(&first.theta).into_iter().map(|(k, _)| k));
    if first.log_evidence.is_some() {
        names.push("log_evidence".into());
    }
    for b in 0..first.accepted.len() {
        names.push(if first.accepted.len() == 1 { "accepted".into() } else { format!("accepted_{}", b + 1) });
    }
    if store_paths {
        names.extend((1..=first.path.len()).map(|n| format!("x_{n}")));
    }
    let mut table = ChainTable { names: names.clone(), columns: vec![Vec::new(); names.len()] };
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&names)?;
    for row in &out.rows {
        let mut values = vec![row.iteration as f64];
        values.extend(theta_columns(&row.theta).into_iter().map(|(_, v)| v));
        values.extend(row.log_evidence);
        values.extend(row.accepted.iter().map(|&a| f64::from(u8::from(a))));
        if store_paths {
            values.extend(row.path.iter().map(|&x| x as f64));
        }
        w.write_record(values.iter().map(|v| v.to_string()))?;
        for (c, v) in table.columns.iter_mut().zip(values) {
            c.push(v);
        }
    }
    w.flush()?;
    Ok(table)
}

/// Posterior marginal of every `X_n`, estimated from the retained paths.
fn write_marginals(path: &Path, out: &ChainOutput, k: usize) -> Result<()> {
    let t = out.rows[0].path.len();
    let mut counts = vec![vec![0usize; k]; t];
    for row in &out.rows {
        for (n, &x) in row.path.iter().enumerate() {
            counts[n][x] += 1;
        }
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["n".to_string()];
    header.extend((0..k).map(|x| format!("p_x{x}")));
    w.write_record(&header)?;
    let total = out.rows.len() as f64;
    for (n, c) in counts.iter().enumerate() {
        let mut rec = vec![(n + 1).to_string()];
        rec.extend(c.iter().map(|&v| (v as f64 / total).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every chain of the experiment and writes, per chain `c`,
/// `chain-c.csv`, `marginals-c.csv` and `summary-c.txt` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.build_model()?;
    let priors = cfg.build_priors()?;
    let proposal = cfg.build_proposal()?;
    let data = load_data(cfg, &spec)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let s = &cfg.sampler;

    let outputs: Vec<Result<ChainOutput>> =
        (0..s.chains).into_par_iter().map(|c| run_chain(cfg, &spec, &priors, &proposal, &data.y, c)).collect();

    let mut written = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out?;
        let chain_path = out_dir.join(format!("chain-{c}.csv"));
        let table = write_chain(&chain_path, &out, s.store_paths)?;
        let marg_path = out_dir.join(format!("marginals-{c}.csv"));
        write_marginals(&marg_path, &out, spec.num_states())?;

        let mut summary = String::new();
        writeln!(summary, "model: {:?} ({:?} transition)", cfg.model.name, cfg.model.transition)?;
        writeln!(summary, "sampler: {:?}, N = {}, chain {c} of {}", s.kind, s.particles, s.chains)?;
        writeln!(
            summary,
            "iterations: {} (burn-in {}, thin {}), observations: {} ({} outliers removed)",
            s.iterations,
            s.burn_in,
            s.thin,
            data.y.len(),
            data.removed
        )?;
        for (b, a) in out.acceptance.iter().enumerate() {
            writeln!(summary, "acceptance rate, block {}: {a:.4}", b + 1)?;
        }
        if !out.acceptance.is_empty() {
            let overall = out.acceptance.iter().sum::<f64>() / out.acceptance.len() as f64;
            writeln!(summary, "acceptance rate, overall: {overall:.4}")?;
        }
        writeln!(summary, "runtime: {:.3} s", out.seconds)?;
        summary.push_str(&summarize(&table, &cfg.output.lags, cfg.output.bins)?);
        let summary_path = out_dir.join(format!("summary-{c}.txt"));
        std::fs::write(&summary_path, summary)?;
        written.extend([chain_path, marg_path, summary_path]);
    }
    Ok(written)
}
