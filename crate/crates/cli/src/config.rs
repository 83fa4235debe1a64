//! Experiment configuration: a TOML file with `model`, `parameters`, `priors`,
//! `proposal`, `sampler`, `data` and `output` tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpmcmc::model::builtin::{self, AutoregressionConfig, ExchangeRateConfig, ScalarSwitchingConfig, WellLogConfig};
use dpmcmc::model::{ModelSpec, Theta, TransitionParam, TransitionTreatment};
use dpmcmc::samplers::prior::{Prior, PriorSpec};
use dpmcmc::samplers::proposal::{Block, Move, ProposalSpec, Target};
use nalgebra::DMatrix;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Initial parameter values; also the true values when simulating.
    pub parameters: ParametersConfig,
    pub priors: Option<PriorsConfig>,
    pub proposal: Option<ProposalConfig>,
    pub sampler: SamplerConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the config file; relative data paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Autoregression,
    WellLog,
    ExchangeRate,
    ScalarSwitching,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMode {
    #[default]
    Explicit,
    Unnormalized,
    Marginalized,
}

impl From<TransitionMode> for TransitionTreatment {
    fn from(m: TransitionMode) -> Self {
        match m {
            TransitionMode::Explicit => Self::Explicit,
            TransitionMode::Unnormalized => Self::Unnormalized,
            TransitionMode::Marginalized => Self::Marginalized,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelKind,
    #[serde(default)]
    pub transition: TransitionMode,
    /// Well-log sampling interval.
    pub delta: Option<f64>,
    /// Initial-state mean and variances (diagonal), overriding the model defaults.
    pub init_mean: Option<Vec<f64>>,
    pub init_var: Option<Vec<f64>>,
    /// Scalar switching model coefficients, one per state.
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ParametersConfig {
    /// Row-stochastic `P_X`.
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct PriorsConfig {
    /// Dirichlet pseudo-counts for the rows of `P_X`.
    pub dirichlet: Option<Vec<Vec<f64>>>,
    #[serde(flatten)]
    pub params: BTreeMap<String, PriorConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    Gaussian {
        mean: f64,
        var: f64,
        #[serde(default = "neg_inf")]
        lower: f64,
        #[serde(default = "pos_inf")]
        upper: f64,
    },
    InverseGamma {
        shape: f64,
        scale: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
    Grid {
        values: Vec<f64>,
    },
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub blocks: Vec<BlockConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub moves: Vec<MoveConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveConfig {
    /// A parameter name, or `transition` for every unnormalised transition weight.
    pub target: String,
    pub kind: MoveKind,
    pub std: Option<f64>,
    /// `[weight, std]` pairs of a log-domain mixture.
    pub components: Option<Vec<[f64; 2]>>,
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    GaussianWalk,
    LogGaussianWalk,
    LogGaussianMixture,
    Grid,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Pmmh,
    Pg,
    PgNoBackward,
    GerlachGibbs,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Write every retained path to the chain CSV, not just the marginals.
    #[serde(default)]
    pub store_paths: bool,
    /// Keep `θ` fixed in the Gibbs samplers instead of updating it conjugately.
    #[serde(default)]
    pub fix_parameters: bool,
    /// Sort the four exchange-rate volatility regimes by variance after sampling.
    pub relabel: Option<bool>,
}

fn default_particles() -> usize {
    50
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub outlier_threshold: Option<f64>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub length: usize,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "default_lags")]
    pub lags: Vec<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out(), lags: default_lags(), bins: default_bins() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_lags() -> Vec<usize> {
    vec![1, 5, 10]
}

fn default_bins() -> usize {
    20
}

/// Reads and validates a config file. TOML errors carry line and column.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = parse(&text).with_context(|| format!("in config {}", path.display()))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", describe_toml_error(text, &e)))?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        bail!("{what} must be a non-empty square matrix");
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if s.iterations <= s.burn_in {
            bail!("sampler.iterations ({}) must exceed sampler.burn_in ({})", s.iterations, s.burn_in);
        }
        if s.thin == 0 || s.chains == 0 {
            bail!("sampler.thin and sampler.chains must be at least 1");
        }
        if s.particles == 0 {
            bail!("sampler.particles must be at least 1");
        }
        if matches!(s.kind, SamplerKind::Pg | SamplerKind::PgNoBackward) && s.particles < 2 {
            bail!("particle Gibbs needs sampler.particles >= 2, got {}", s.particles);
        }
        match (&self.data.path, &self.data.simulate) {
            (Some(_), Some(_)) => bail!("data: give either `path` or `simulate`, not both"),
            (None, None) => bail!("data: give `path` or a `simulate` table"),
            _ => {}
        }
        if let Some(t) = self.data.outlier_threshold {
            if t.is_nan() || t <= 0.0 {
                bail!("data.outlier_threshold must be positive");
            }
        }
        if self.output.lags.is_empty() || self.output.bins == 0 {
            bail!("output.lags must be non-empty and output.bins positive");
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        match self.model.name {
            ModelKind::Autoregression => 2,
            ModelKind::WellLog => 3,
            ModelKind::ExchangeRate => 4,
            ModelKind::ScalarSwitching => self.model.a.as_ref().map_or(2, Vec::len),
        }
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let m = &self.model;
        fn fixed<const D: usize>(v: &Option<Vec<f64>>, default: [f64; D], what: &str) -> Result<[f64; D]> {
            match v {
                None => Ok(default),
                Some(v) => v
                    .as_slice()
                    .try_into()
                    .map_err(|_| anyhow::anyhow!("model.{what} needs {D} values, got {}", v.len())),
            }
        }
        let spec = match m.name {
            ModelKind::Autoregression => {
                let mut c = AutoregressionConfig::default();
                if let Some(v) = &m.init_mean {
                    let [e0, mu0]: [f64; 2] = fixed(&Some(v.clone()), [0.0, 0.0], "init_mean")?;
                    if e0 != 0.0 {
                        bail!("model.init_mean: the autoregression deviation starts at mean 0");
                    }
                    c.mu0_mean = mu0;
                }
                if let Some(v) = &m.init_var {
                    let [e0, mu0] = fixed(&Some(v.clone()), [0.0, 0.0], "init_var")?;
                    c.e0_var = e0;
                    c.mu0_var = mu0;
                }
                builtin::autoregression_shifting_level(&c)
            }
            ModelKind::WellLog => {
                let d = WellLogConfig::default();
                builtin::well_log(&WellLogConfig {
                    delta: m.delta.unwrap_or(d.delta),
                    init_mean: fixed(&m.init_mean, d.init_mean, "init_mean")?,
                    init_var: fixed(&m.init_var, d.init_var, "init_var")?,
                })
            }
            ModelKind::ExchangeRate => {
                let d = ExchangeRateConfig::default();
                builtin::exchange_rate(&ExchangeRateConfig {
                    init_mean: fixed(&m.init_mean, d.init_mean, "init_mean")?,
                    init_var: fixed(&m.init_var, d.init_var, "init_var")?,
                })
            }
            ModelKind::ScalarSwitching => {
                let d = ScalarSwitchingConfig::default();
                let [mean] = fixed(&m.init_mean, [d.init_mean], "init_mean")?;
                let [var] = fixed(&m.init_var, [d.init_var], "init_var")?;
                builtin::scalar_switching(&ScalarSwitchingConfig {
                    a: m.a.clone().unwrap_or(d.a),
                    b: m.b.clone().unwrap_or(d.b),
                    init_mean: mean,
                    init_var: var,
                })?
            }
        };
        Ok(spec)
    }

    /// The true parameter value, with an explicit transition matrix.
    pub fn true_theta(&self) -> Result<Theta> {
        let p = self
            .parameters
            .transition
            .as_ref()
            .context("parameters.transition is required to simulate data")?;
        let p = matrix(p, "parameters.transition")?;
        if p.nrows() != self.num_states() {
            bail!("parameters.transition must be {0}x{0}", self.num_states());
        }
        Ok(Theta::new(self.parameters.values.clone(), Some(TransitionParam::Explicit(p)))?)
    }

    /// The starting parameter value under the configured transition treatment.
    pub fn initial_theta(&self) -> Result<Theta> {
        let k = self.num_states();
        let transition = match self.model.transition {
            TransitionMode::Marginalized => {
                TransitionParam::Marginalized { alpha: self.dirichlet()?.unwrap_or(DMatrix::from_element(k, k, 1.0)) }
            }
            mode => {
                let explicit = self.true_theta()?.transition().cloned().expect("explicit transition");
                explicit.with_treatment(mode.into(), &DMatrix::zeros(k, k))?
            }
        };
        Ok(Theta::new(self.parameters.values.clone(), Some(transition))?)
    }

    fn dirichlet(&self) -> Result<Option<DMatrix<f64>>> {
        match self.priors.as_ref().and_then(|p| p.dirichlet.as_ref()) {
            Some(rows) => Ok(Some(matrix(rows, "priors.dirichlet")?)),
            None => Ok(match self.model.name {
                ModelKind::Autoregression => builtin::autoregression_priors().dirichlet().cloned(),
                ModelKind::WellLog => builtin::well_log_priors().dirichlet().cloned(),
                ModelKind::ExchangeRate => builtin::exchange_rate_priors().dirichlet().cloned(),
                ModelKind::ScalarSwitching => None,
            }),
        }
    }

    /// The configured priors, or the model's defaults when the table is absent.
    pub fn build_priors(&self) -> Result<PriorSpec> {
        let Some(cfg) = &self.priors else {
            return Ok(match self.model.name {
                ModelKind::Autoregression => builtin::autoregression_priors(),
                ModelKind::WellLog => builtin::well_log_priors(),
                ModelKind::ExchangeRate => builtin::exchange_rate_priors(),
                ModelKind::ScalarSwitching => PriorSpec::new()
                    .with("sigma2", Prior::InverseGamma { shape: 2.0, scale: 1.0 })?
                    .with_dirichlet(DMatrix::from_element(self.num_states(), self.num_states(), 1.0))?,
            });
        };
        let mut spec = PriorSpec::new();
        for (name, p) in &cfg.params {
            let prior = match p.clone() {
                PriorConfig::Gaussian { mean, var, lower, upper } => Prior::Gaussian { mean, var, lower, upper },
                PriorConfig::InverseGamma { shape, scale } => Prior::InverseGamma { shape, scale },
                PriorConfig::Gamma { shape, rate } => Prior::Gamma { shape, rate },
                PriorConfig::Uniform { lower, upper } => Prior::Uniform { lower, upper },
                PriorConfig::Grid { values } => Prior::Grid(values),
            };
            spec = spec.with(name, prior)?;
        }
        if let Some(alpha) = self.dirichlet()? {
            spec = spec.with_dirichlet(alpha)?;
        }
        Ok(spec)
    }

    /// The configured proposal, or a default random walk for the model.
    pub fn build_proposal(&self) -> Result<ProposalSpec> {
        let sample_weights = self.model.transition == TransitionMode::Unnormalized;
        let Some(cfg) = &self.proposal else {
            return Ok(match self.model.name {
                ModelKind::Autoregression => builtin::autoregression_proposal(sample_weights),
                ModelKind::ExchangeRate => builtin::exchange_rate_proposal(),
                ModelKind::WellLog | ModelKind::ScalarSwitching => {
                    let mut moves: Vec<(Target, Move)> = self
                        .parameters
                        .values
                        .keys()
                        .map(|n| (Target::Param(n.clone()), Move::LogGaussianWalk { std: 0.1 }))
                        .collect();
                    if sample_weights {
                        moves.push((Target::TransitionWeights, Move::LogGaussianWalk { std: 0.1 }));
                    }
                    ProposalSpec::single(moves)?
                }
            });
        };
        let mut blocks = Vec::new();
        for (b, block) in cfg.blocks.iter().enumerate() {
            let mut moves = Vec::new();
            for m in &block.moves {
                let what = || format!("proposal block {} move on `{}`", b + 1, m.target);
                let mv = match m.kind {
                    MoveKind::GaussianWalk => Move::GaussianWalk { std: m.std.with_context(|| format!("{}: needs `std`", what()))? },
                    MoveKind::LogGaussianWalk => {
                        Move::LogGaussianWalk { std: m.std.with_context(|| format!("{}: needs `std`", what()))? }
                    }
                    MoveKind::LogGaussianMixture => Move::LogGaussianMixture(
                        m.components
                            .as_ref()
                            .with_context(|| format!("{}: needs `components`", what()))?
                            .iter()
                            .map(|c| (c[0], c[1]))
                            .collect(),
                    ),
                    MoveKind::Grid => Move::Grid(m.values.clone().with_context(|| format!("{}: needs `values`", what()))?),
                };
                let target = if m.target == "transition" {
                    if !sample_weights {
                        bail!("{}: transition moves need model.transition = \"unnormalized\"", what());
                    }
                    Target::TransitionWeights
                } else {
                    if !self.parameters.values.contains_key(&m.target) {
                        bail!("{}: unknown parameter", what());
                    }
                    Target::Param(m.target.clone())
                };
                moves.push((target, mv));
            }
            blocks.push(Block::new(moves)?);
        }
        Ok(ProposalSpec::new(blocks)?)
    }

    pub fn relabel(&self) -> bool {
        self.sampler.relabel.unwrap_or(self.model.name == ModelKind::ExchangeRate)
    }
}
