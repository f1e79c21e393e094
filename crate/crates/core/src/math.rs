//! Log-space reductions and interval selection.

use crate::error::{Error, Result};

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    logsumexp(&[a, b])
}

/// Normalized probabilities from log-weights.
///
/// Errors on NaN and when every weight is zero.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.iter().any(|w| w.is_nan()) {
        return Err(Error::Numerical("NaN log-weight".into()));
    }
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    if m == f64::INFINITY {
        return Err(Error::Numerical("infinite log-weight".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// Pick the index whose cumulative interval `[c_{j-1}, c_j)` contains `u`.
///
/// Boundary ties go to the lower index. If rounding leaves `u` past the last
/// cumulative value, the last index with positive probability is taken.
pub fn select_interval(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_pos = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_pos = j;
            cum += p;
            if u < cum {
                return j;
            }
        }
    }
    last_pos
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn norm_sq(q: &[f64]) -> f64 {
    q.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Parameter("slope needs at least two paired points".into()));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("slope undefined for identical abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}
