//! Chain summaries: autocorrelations, acceptance rates and histograms.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Printed in place of an autocorrelation that is not defined.
pub const UNDEFINED: &str = "undefined";

/// Sample autocorrelation at `lag`; `None` for a constant series or a lag not
/// shorter than the series.
pub fn autocorrelation(xs: &[f64], lag: usize) -> Option<f64> {
    let n = xs.len();
    if lag >= n {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if var <= 0.0 {
        return None;
    }
    let cov: f64 = xs.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum();
    Some(cov / var)
}

/// Equal-width histogram over `[min, max]`; returns the edges and counts.
pub fn histogram(xs: &[f64], bins: usize) -> (f64, f64, Vec<usize>) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0; bins];
    if hi == lo {
        counts[0] = xs.len();
        return (lo, hi, counts);
    }
    let w = (hi - lo) / bins as f64;
    for &x in xs {
        let b = (((x - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (lo, hi, counts)
}

/// Columns of a chain CSV.
#[derive(Clone, Debug, Default)]
pub struct ChainTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl ChainTable {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn read_chain(path: &Path) -> Result<ChainTable> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening chain {}", path.display()))?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("{}: line {}: column `{}` is not numeric: `{field}`", path.display(), i + 2, names[j]))?;
            columns[j].push(v);
        }
    }
    let table = ChainTable { names, columns };
    if table.rows() == 0 {
        bail!("{}: chain is empty", path.display());
    }
    Ok(table)
}

fn is_path_column(name: &str) -> bool {
    name.strip_prefix("x_").is_some_and(|r| r.parse::<usize>().is_ok())
}

fn fmt_acf(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:.4}"))
}

/// Plain-text summary of a chain: acceptance rate from `accepted*` columns,
/// autocorrelations at `lags` and histograms for parameter columns, and the
/// lag-1 autocorrelation across path columns `x_n`.
pub fn summarize(table: &ChainTable, lags: &[usize], bins: usize) -> Result<String> {
    if table.rows() == 0 {
        bail!("chain is empty");
    }
    let mut out = String::new();
    writeln!(out, "rows: {}", table.rows())?;
    let mut path_acfs = Vec::new();
    for (name, col) in table.names.iter().zip(&table.columns) {
        if name == "iteration" || name == "chain" {
            continue;
        }
        if name.starts_with("accepted") {
            let rate = col.iter().sum::<f64>() / col.len() as f64;
            writeln!(out, "acceptance rate ({name}): {rate:.4}")?;
            continue;
        }
        if is_path_column(name) {
            path_acfs.push(autocorrelation(col, 1));
            continue;
        }
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        writeln!(out, "{name}: mean {mean:.6e}, sd {sd:.6e}")?;
        let acfs: Vec<String> = lags.iter().map(|&l| format!("lag {l} {}", fmt_acf(autocorrelation(col, l)))).collect();
        writeln!(out, "  autocorrelation: {}", acfs.join(", "))?;
        let (lo, hi, counts) = histogram(col, bins);
        let counts: Vec<String> = counts.iter().map(usize::to_string).collect();
        writeln!(out, "  histogram [{lo:.6e}, {hi:.6e}]: {}", counts.join(" "))?;
    }
    if !path_acfs.is_empty() {
        let defined: Vec<f64> = path_acfs.iter().flatten().copied().collect();
        let mean = if defined.is_empty() {
            UNDEFINED.to_string()
        } else {
            format!("{:.4}", defined.iter().sum::<f64>() / defined.len() as f64)
        };
        writeln!(
            out,
            "path: mean lag-1 autocorrelation {mean} over {} of {} sites ({} {UNDEFINED})",
            defined.len(),
            path_acfs.len(),
            path_acfs.len() - defined.len()
        )?;
    }
    Ok(out)
}
