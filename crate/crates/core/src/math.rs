//! Log-domain helpers and small dense linear-algebra utilities.

use nalgebra::{DMatrix, DVector};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(xs)))` with max-shift; returns `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place to probabilities and returns the log normalizer.
pub fn normalize_log_weights(log_w: &[f64], out: &mut Vec<f64>) -> f64 {
    let lse = log_sum_exp(log_w);
    out.clear();
    if lse == f64::NEG_INFINITY {
        out.resize(log_w.len(), 0.0);
        return lse;
    }
    out.extend(log_w.iter().map(|&lw| (lw - lse).exp()));
    lse
}

/// Neumaier-compensated running sums: `out[i] = sum(xs[..=i])`.
pub fn compensated_cumsum(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        out.push(sum + comp);
    }
    out
}

/// Draws an index from unnormalized non-negative weights using one uniform in `[0, 1)`.
pub fn categorical_index(weights: &[f64], u: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = Some(i);
            if target < acc {
                return Some(i);
            }
        }
    }
    last_positive
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric square root `S` with `S S^T = M`, clamping negative eigenvalues at zero.
///
/// Returns the root and the most negative eigenvalue encountered (0 when none).
pub fn psd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0.0);
    }
    if n == 1 {
        let v = m[(0, 0)];
        return (DMatrix::from_element(1, 1, v.max(0.0).sqrt()), v.min(0.0));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut most_negative = 0.0_f64;
    let roots = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&l| {
            most_negative = most_negative.min(l);
            l.max(0.0).sqrt()
        }),
    );
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), most_negative)
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via its eigen-decomposition.
pub fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 1 {
        let v = m[(0, 0)];
        return DMatrix::from_element(1, 1, if v > 1e-300 { 1.0 / v } else { 0.0 });
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let tol = max * 1e-12 * n as f64;
    let inv = DVector::from_iterator(
        n,
        eig.eigenvalues
            .iter()
            .map(|&l| if l > tol && l > 0.0 { 1.0 / l } else { 0.0 }),
    );
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&inv) * v.transpose()
}
