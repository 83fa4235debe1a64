//! Reading one-column series and writing simulated ones.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// A series with the number of rows dropped as outliers.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    pub removed: usize,
}

/// Reads one decimal value per line. Blank lines and lines starting with `#`
/// are skipped; a trailing comma (single-column CSV) is tolerated.
///
/// With `outlier_threshold`, values whose robust z-score
/// `|x - median| / (1.4826 MAD)` exceeds it are dropped.
pub fn ingest_series(path: &Path, outlier_threshold: Option<f64>) -> Result<Series> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading data {}", path.display()))?;
    let values = parse_series(&text).with_context(|| format!("in data file {}", path.display()))?;
    Ok(remove_outliers(values, outlier_threshold))
}

pub fn parse_series(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.trim().trim_end_matches(',').trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ => bail!("line {}: expected a decimal number, found `{field}`", i + 1),
        }
    }
    if values.is_empty() {
        bail!("no observations found");
    }
    Ok(values)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn remove_outliers(values: Vec<f64>, threshold: Option<f64>) -> Series {
    let Some(threshold) = threshold.filter(|t| t.is_finite()) else {
        return Series { values, removed: 0 };
    };
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let scale = 1.4826 * median(&dev);
    if scale == 0.0 {
        return Series { values, removed: 0 };
    }
    let kept: Vec<f64> = values.iter().copied().filter(|v| ((v - med) / scale).abs() <= threshold).collect();
    Series { removed: values.len() - kept.len(), values: kept }
}

pub fn write_series(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for v in values {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}
