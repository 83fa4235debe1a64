use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpmcmc_cli::config::{self, PriorConfig};
use dpmcmc_cli::data::ingest_series;
use dpmcmc_cli::diagnostics::read_chain;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dpmcmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmcmc")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"
[model]
name = "scalar-switching"

[parameters]
sigma2 = 0.5
transition = [[0.8, 0.2], [0.3, 0.7]]

[sampler]
kind = "pmmh"
particles = 8
iterations = 120
burn_in = 20
thin = 2
chains = 2
seed = 9

[data]
simulate = { length = 40, seed = 3 }
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn same_seed_gives_identical_chains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&dpmcmc(&["run", cfg, "--out-dir", a.to_str().unwrap()]));
    ok(&dpmcmc(&["run", cfg, "--out-dir", b.to_str().unwrap()]));
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "chain-0.csv"), read(&b, "chain-0.csv"));
    assert_eq!(read(&a, "chain-1.csv"), read(&b, "chain-1.csv"));
    assert_ne!(read(&a, "chain-0.csv"), read(&a, "chain-1.csv"));

    let c = dir.path().join("c");
    ok(&dpmcmc(&["run", cfg, "--seed", "10", "--out-dir", c.to_str().unwrap()]));
    assert_ne!(read(&a, "chain-0.csv"), read(&c, "chain-0.csv"));

    // (iterations - burn_in) / thin rows.
    assert_eq!(read_chain(&a.join("chain-0.csv")).unwrap().rows(), 50);
}

#[test]
fn every_sampler_runs_and_its_output_can_be_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["pmmh", "pg", "pg-no-backward", "gerlach-gibbs"] {
        let text = SMALL.replace("kind = \"pmmh\"", &format!("kind = \"{kind}\"\nstore_paths = true"));
        let cfg = write_config(dir.path(), &text);
        let out = dir.path().join(kind);
        ok(&dpmcmc(&["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]));
        let summary = std::fs::read_to_string(out.join("summary-0.txt")).unwrap();
        assert!(summary.contains("sigma2: mean"), "{summary}");
        assert!(summary.contains("path: mean lag-1 autocorrelation"), "{summary}");
        let report = ok(&dpmcmc(&["diagnose", out.join("chain-0.csv").to_str().unwrap(), "--lags", "1,2"]));
        assert!(report.contains("lag 2"));
        let marginals = read_chain(&out.join("marginals-0.csv")).unwrap();
        assert_eq!(marginals.rows(), 40);
        for n in 0..40 {
            let s: f64 = marginals.columns[1..].iter().map(|c| c[n]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn autoregression_config_runs_on_simulated_data() {
    let cfg = config::load(&repo().join("configs/autoregression.toml")).unwrap();
    assert_eq!(cfg.data.simulate.as_ref().unwrap().length, 1000);
    assert_eq!(cfg.parameters.values["phi"], 0.1);
    assert_eq!(cfg.parameters.values["sigma2"].sqrt(), 0.1);
    assert_eq!(cfg.parameters.transition, Some(vec![vec![0.99, 0.01], vec![0.99, 0.01]]));

    // The shipped config with a shorter chain.
    let text = std::fs::read_to_string(repo().join("configs/autoregression.toml"))
        .unwrap()
        .replace("iterations = 2000", "iterations = 30")
        .replace("burn_in = 200", "burn_in = 10");
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    ok(&dpmcmc(&["run", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]));
    assert_eq!(read_chain(&out.join("chain-0.csv")).unwrap().rows(), 20);
    assert_eq!(read_chain(&out.join("marginals-0.csv")).unwrap().rows(), 1000);
}

#[test]
fn shipped_configs_parse() {
    for name in ["autoregression", "autoregression_pmmh", "well_log", "exchange_rate"] {
        let cfg = config::load(&repo().join(format!("configs/{name}.toml"))).unwrap();
        cfg.build_model().unwrap();
        cfg.build_priors().unwrap();
        cfg.build_proposal().unwrap();
        cfg.initial_theta().unwrap();
    }
}

#[test]
fn well_log_config_declares_its_priors_and_interval() {
    let cfg = config::load(&repo().join("configs/well_log.toml")).unwrap();
    assert_eq!(cfg.model.delta, Some(0.1));
    let priors = cfg.priors.as_ref().unwrap();
    for name in ["sigma2_y", "sigma2_mu0", "sigma2_mu1"] {
        assert!(matches!(priors.params[name], PriorConfig::InverseGamma { shape, scale } if shape == 2.0 && scale == 3.0));
    }
    let series = ingest_series(&repo().join("data/well_log_synthetic.txt"), cfg.data.outlier_threshold).unwrap();
    assert_eq!(series.removed, 4);
    assert_eq!(series.values.len(), 4000);
}

#[test]
fn exchange_rate_config_has_two_blocks_and_relabels() {
    let cfg = config::load(&repo().join("configs/exchange_rate.toml")).unwrap();
    assert_eq!(cfg.sampler.particles, 200);
    assert_eq!(cfg.data.simulate.as_ref().unwrap().length, 1322);
    assert_eq!(cfg.build_proposal().unwrap().blocks.len(), 2);
    assert!(cfg.relabel());
}

#[test]
fn simulate_writes_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sim");
    ok(&dpmcmc(&["simulate", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]));
    let series = ingest_series(&out.join("data.txt"), None).unwrap();
    assert_eq!(series.values.len(), 40);
}

#[test]
fn malformed_inputs_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("particles = 8", "particles = eight"));
    let out = dpmcmc(&["run", cfg.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 11"), "{}", String::from_utf8_lossy(&out.stderr));

    let data = dir.path().join("data.txt");
    std::fs::write(&data, "1.0\n2.0\n3,5\n").unwrap();
    let text = SMALL.replace("simulate = { length = 40, seed = 3 }", &format!("path = {:?}", data.to_str().unwrap()));
    let cfg = write_config(dir.path(), &text);
    let out = dpmcmc(&["run", cfg.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diagnose_handles_constant_and_empty_chains() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("constant.csv");
    std::fs::write(&constant, "iteration,a,accepted\n1,2.0,0\n2,2.0,1\n3,2.0,1\n4,2.0,0\n").unwrap();
    let report = ok(&dpmcmc(&["diagnose", constant.to_str().unwrap(), "--lags", "1"]));
    assert!(report.contains("lag 1 undefined"), "{report}");
    assert!(report.contains("acceptance rate (accepted): 0.5000"), "{report}");

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "iteration,a\n").unwrap();
    assert!(!dpmcmc(&["diagnose", empty.to_str().unwrap()]).status.success());
}
