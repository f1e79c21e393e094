//! Closed-form moments for targets that have them.

use madprops::targets::{posterior_moments, TargetConfig};

fn double_factorial(n: i32) -> f64 {
    (1..=n).rev().step_by(2).map(f64::from).product()
}

/// `E[q_k^power]` under a centred normal with standard deviation `s`, shifted by `m`.
fn normal_moment(m: f64, s: f64, power: i32) -> Option<f64> {
    match power {
        1 => Some(m),
        2 => Some(m * m + s * s),
        p if m == 0.0 => Some(if p % 2 == 1 { 0.0 } else { double_factorial(p - 1) * s.powi(p) }),
        _ => None,
    }
}

/// Exact expectation of an observable named `qK` or `qK^P`, when known.
pub fn known_moment(target: &TargetConfig, name: &str) -> Option<f64> {
    let rest = name.strip_prefix('q')?;
    let (k, power) = match rest.split_once('^') {
        Some((k, p)) => (k.parse::<usize>().ok()?, p.parse::<i32>().ok()?),
        None => (rest.parse::<usize>().ok()?, 1),
    };
    let k = k.checked_sub(1)?;
    match target {
        TargetConfig::Gaussian { sigma, .. } => normal_moment(0.0, *sigma, power),
        TargetConfig::ProductNormal { .. } => normal_moment(0.0, 1.0, power),
        TargetConfig::Posterior { prior, data, noise } => {
            let (m, v) = posterior_moments(prior, data, *noise);
            normal_moment(m[k], v[k].sqrt(), power)
        }
        TargetConfig::Mixture { weights, centers, tau } => {
            if power > 2 {
                return None;
            }
            let tot: f64 = weights.iter().sum();
            let mut acc = 0.0;
            for (w, c) in weights.iter().zip(centers) {
                acc += w / tot * normal_moment(c[k], *tau, power)?;
            }
            Some(acc)
        }
        TargetConfig::Banana { .. } => None,
    }
}
