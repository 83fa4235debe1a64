use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Parser, Subcommand};
use dpmcmc_cli::{config, diagnostics, run};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Discrete particle MCMC for switching linear-Gaussian state-space models.
#[derive(Parser, Debug)]
#[command(name = "dpmcmc", version, about)]
struct Cli {
    /// Master seed; overrides `sampler.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the sampler described by a config file.
    Run { config: PathBuf },
    /// Simulate data from the config's model and parameter values.
    Simulate { config: PathBuf },
    /// Summarize an existing chain CSV.
    Diagnose {
        chain: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        lags: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<(config::ExperimentConfig, PathBuf)> {
    let mut cfg = config::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
    }
    let out = cli.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => {
            let (cfg, out) = load(&cli, config)?;
            for path in run::run_experiment(&cfg, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Simulate { config } => {
            let (cfg, out) = load(&cli, config)?;
            for path in run::simulate_to(&cfg, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Diagnose { chain, lags, bins } => {
            if *bins == 0 {
                anyhow::bail!("--bins must be positive");
            }
            let table = diagnostics::read_chain(chain)?;
            let text = diagnostics::summarize(&table, lags, *bins)?;
            print!("{text}");
            if let Some(dir) = &cli.out_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("diagnostics.txt");
                std::fs::write(&path, &text)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
