//! Proposal-scale tuning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::kernels::{BetaChoice, Family, TransitionKernel};
use crate::math::{mean, norm_sq, variance};
use crate::rng::{ChainStreams, Purpose, StepStreams};

/// Slingshot proposal scale closest to a spherical Gaussian target with
/// standard deviation `sigma_pi`, given the current point `q0`.
pub fn sigma_star(q0: &[f64], sigma_pi: f64) -> f64 {
    let d = q0.len().max(1) as f64;
    let r2 = norm_sq(q0) / d;
    if r2 == 0.0 {
        return sigma_pi;
    }
    let s2 = sigma_pi * sigma_pi;
    let disc = s2 * s2 + 12.0 * s2 * r2 + 4.0 * r2 * r2;
    (0.75 * s2 + 0.5 * r2 + 0.25 * disc.sqrt()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptPolicy {
    pub target_rate: f64,
    #[serde(default = "AdaptPolicy::default_lo")]
    pub clamp_lo: f64,
    #[serde(default = "AdaptPolicy::default_hi")]
    pub clamp_hi: f64,
    #[serde(default = "AdaptPolicy::default_epoch")]
    pub epoch0: usize,
    #[serde(default = "AdaptPolicy::default_growth")]
    pub growth: f64,
}

impl AdaptPolicy {
    fn default_lo() -> f64 {
        0.5
    }
    fn default_hi() -> f64 {
        2.0
    }
    fn default_epoch() -> usize {
        100
    }
    fn default_growth() -> f64 {
        2.0
    }

    pub fn new(target_rate: f64) -> Result<Self> {
        let p = Self {
            target_rate,
            clamp_lo: 0.5,
            clamp_hi: 2.0,
            epoch0: 100,
            growth: 2.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return param("target acceptance rate must lie strictly between 0 and 1");
        }
        if !(self.clamp_lo < 1.0 && 1.0 < self.clamp_hi && self.clamp_lo > 0.0) {
            return param("clamp must satisfy 0 < lo < 1 < hi");
        }
        if self.epoch0 == 0 || !(self.growth > 1.0) {
            return param("epochs need a positive initial length and growth > 1");
        }
        Ok(())
    }

    /// Lengths of the adaptation epochs that fit inside `burn_in` iterations.
    pub fn epochs(&self, burn_in: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut used = 0usize;
        let mut len = self.epoch0 as f64;
        while used < burn_in {
            let l = (len.round() as usize).min(burn_in - used).max(1);
            out.push(l);
            used += l;
            len *= self.growth;
        }
        out
    }
}

const RATE_FLOOR: f64 = 1e-12;

/// New scale after an epoch with acceptance rate `measured`.
///
/// The precision multiplier `r = clamp(target/measured)` scales `σ⁻²`, so the
/// scale moves by `1/√r`.
pub fn adapt_rate(current_sigma: f64, measured_rate: f64, policy: &AdaptPolicy) -> Result<f64> {
    if !(0.0..=1.0).contains(&measured_rate) {
        return param("measured rate must lie in [0, 1]");
    }
    policy.validate()?;
    let r = (policy.target_rate / measured_rate.max(RATE_FLOOR)).clamp(policy.clamp_lo, policy.clamp_hi);
    Ok(current_sigma / r.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneTrace {
    /// Scale in force during each epoch.
    pub sigmas: Vec<f64>,
    /// Acceptance rate measured over each epoch.
    pub rates: Vec<f64>,
    pub final_sigma: f64,
    pub final_state: Vec<f64>,
}

/// Adapt a scale parameter over the burn-in window.
///
/// `build` maps a scale to a kernel. The returned scale is frozen; callers
/// continue the chain with `build(final_sigma)` from `final_state`.
pub fn tune_scale<F>(
    build: F,
    sigma0: f64,
    q_init: &[f64],
    burn_in: usize,
    policy: &AdaptPolicy,
    streams: ChainStreams,
) -> Result<TuneTrace>
where
    F: Fn(f64) -> Result<TransitionKernel>,
{
    policy.validate()?;
    let mut sigma = sigma0;
    let mut q = q_init.to_vec();
    let mut sigmas = Vec::new();
    let mut rates = Vec::new();
    let mut iteration = 0u64;
    for len in policy.epochs(burn_in) {
        let kernel = build(sigma)?;
        let mut acc = 0usize;
        for _ in 0..len {
            let step = kernel.step(&q, &streams.step(iteration))?;
            acc += step.record.accepted as usize;
            q = step.next;
            iteration += 1;
        }
        let rate = acc as f64 / len as f64;
        sigmas.push(sigma);
        rates.push(rate);
        sigma = adapt_rate(sigma, rate, policy)?;
    }
    Ok(TuneTrace { sigmas, rates, final_sigma: sigma, final_state: q })
}

/// Mean and variance across independent clouds of the average slingshot
/// weight `(1/p) Σ π(q_l)/f(q0, q_l)`.
///
/// `π` is normalized when the target's normalizer is known, so the mean
/// tends to one as `p` grows.
pub fn weight_mean_variance(
    kernel: &TransitionKernel,
    q0: &[f64],
    redraws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let spec = kernel.spec();
    if spec.family != Family::Barker || spec.beta != Some(BetaChoice::Slingshot) {
        return param("weight statistics are defined for the slingshot Barker kernel");
    }
    if redraws < 2 {
        return param("need at least two redraws");
    }
    let p = spec.p;
    if p == 0 {
        return param("need p >= 1");
    }
    let target = kernel.target();
    let proposal = &spec.proposal;
    let values: Vec<f64> = (0..redraws)
        .into_par_iter()
        .map(|r| {
            let s = StepStreams::standalone(seed, r as u64);
            let mut acc = 0.0;
            for l in 1..=p {
                let mut rng = s.stream(Purpose::Proposal, l as u64);
                let x = proposal.draw(q0, &mut rng)?;
                acc += (target.normalized_log_density(&x) - proposal.log_density(q0, &x)?).exp();
            }
            Ok(acc / p as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((mean(&values), variance(&values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn star_spot_values() {
        assert_eq!(sigma_star(&[0.0], 1.0), 1.0);
        assert_eq!(sigma_star(&[0.0, 0.0, 0.0], 2.7), 2.7);
        assert!((sigma_star(&[4.0], 1.0) - 4.18).abs() <= 0.01);
        let big = sigma_star(&[100.0], 1.0);
        assert!((99.0..=101.0).contains(&big));
        let q: Vec<f64> = vec![100.0; 9];
        assert!((99.0..=101.0).contains(&sigma_star(&q, 1.0)));
    }

    #[test]
    fn rate_rule() {
        let pol = AdaptPolicy::new(0.4).unwrap();
        assert_eq!(adapt_rate(1.3, 0.4, &pol).unwrap(), 1.3);
        assert!((adapt_rate(1.0, 0.04, &pol).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((adapt_rate(1.0, 0.0, &pol).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((adapt_rate(1.0, 1.0, &pol).unwrap() - 1.0 / 0.5f64.sqrt()).abs() < 1e-15);
        assert!(AdaptPolicy::new(0.0).is_err());
        assert!(AdaptPolicy::new(1.0).is_err());
        assert!(adapt_rate(1.0, 1.5, &pol).is_err());
    }

    #[test]
    fn epoch_schedule_doubles() {
        let pol = AdaptPolicy::new(0.5).unwrap();
        assert_eq!(pol.epochs(1000), vec![100, 200, 400, 300]);
        assert_eq!(pol.epochs(0), Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn star_bounds(q in prop::collection::vec(-50.0f64..50.0, 1..6), s in 0.1f64..10.0) {
            let v = sigma_star(&q, s);
            prop_assert!(v * v >= s * s * (1.0 - 1e-14));
            prop_assert!(v * v > s * s / 2.0);
        }

        #[test]
        fn star_monotone_in_radius(r in 0.0f64..30.0, dr in 0.01f64..5.0, s in 0.1f64..5.0) {
            prop_assert!(sigma_star(&[r + dr], s) > sigma_star(&[r], s));
        }

        #[test]
        fn adapt_moves_at_most_sqrt_two(sig in 0.01f64..100.0, m in 0.0f64..=1.0, t in 0.01f64..0.99) {
            let pol = AdaptPolicy::new(t).unwrap();
            let new = adapt_rate(sig, m, &pol).unwrap();
            let f = new / sig;
            prop_assert!(f <= 2f64.sqrt() * (1.0 + 1e-12) && f >= 1.0 / 2f64.sqrt() * (1.0 - 1e-12));
        }
    }
}
