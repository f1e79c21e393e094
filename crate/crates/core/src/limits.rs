//! Samplers for the p = ∞ limits of the multiproposal kernels.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{config, param, Error, Result};
use crate::kernels::{BetaChoice, Family, KernelSpec, TransitionKernel};
use crate::math::{normalize_log_weights, select_interval};
use crate::proposals::ProposalKernel;
use crate::rng::{Purpose, StepStreams};
use crate::targets::TargetModel;

/// Size of the importance-resampling pool used when no rejection bound exists.
pub const FALLBACK_POOL: usize = 10_000;
/// Largest normalized weight tolerated in the fallback pool.
pub const FALLBACK_MAX_WEIGHT: f64 = 0.2;
/// Rejection attempts before switching to importance resampling.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000_000;

#[derive(Debug, Clone)]
pub enum LimitKind {
    /// The target itself.
    Slingshot,
    /// `β(q̃) Q(q0, dq̃)` normalized.
    BubbleBath { weight: BetaChoice, log_sup: Option<f64> },
    /// `q̄ ~ Q(q0, ·)` followed by the bubble-bath limit at `q̄`.
    Tjelmeland { weight: BetaChoice, log_sup: Option<f64> },
    /// Exact-time-averaged Hamiltonian flow.
    HmcRandomTime(Box<TransitionKernel>),
}

#[derive(Debug, Clone)]
pub struct LimitKernel {
    pub kind: LimitKind,
    pub target: Arc<TargetModel>,
    pub proposal: ProposalKernel,
}

fn bubble_parts(target: &TargetModel, weight: BetaChoice) -> Result<Option<f64>> {
    match weight {
        BetaChoice::BubbleBath => Ok(target.log_density_sup),
        BetaChoice::BubblePotential => {
            if !target.has_gaussian_reference() {
                return config("potential weights need a target with a Gaussian reference");
            }
            Ok(None)
        }
        _ => config("bubble-bath limits use bubble_bath or bubble_potential weights"),
    }
}

impl LimitKernel {
    pub fn slingshot(target: Arc<TargetModel>) -> Result<Self> {
        if target.exact_sampler.is_none() {
            return Err(Error::Unsupported(format!("target {} has no exact sampler", target.name)));
        }
        let proposal = ProposalKernel::dirac(target.dim);
        Ok(Self { kind: LimitKind::Slingshot, target, proposal })
    }

    pub fn bubble_bath(target: Arc<TargetModel>, proposal: ProposalKernel, weight: BetaChoice) -> Result<Self> {
        Self::check_dims(&target, &proposal)?;
        let log_sup = bubble_parts(&target, weight)?;
        Ok(Self { kind: LimitKind::BubbleBath { weight, log_sup }, target, proposal })
    }

    pub fn tjelmeland(target: Arc<TargetModel>, proposal: ProposalKernel, weight: BetaChoice) -> Result<Self> {
        Self::check_dims(&target, &proposal)?;
        let log_sup = bubble_parts(&target, weight)?;
        Ok(Self { kind: LimitKind::Tjelmeland { weight, log_sup }, target, proposal })
    }

    pub fn hmc_random_time(target: Arc<TargetModel>, time: f64) -> Result<Self> {
        let d = target.dim;
        let k = TransitionKernel::new(KernelSpec::hmc(Family::SingleHmcRandomTime, d, time, 1), target.clone())?;
        Ok(Self { kind: LimitKind::HmcRandomTime(Box::new(k)), target, proposal: ProposalKernel::dirac(d) })
    }

    fn check_dims(target: &TargetModel, proposal: &ProposalKernel) -> Result<()> {
        if proposal.dim != target.dim {
            return config("proposal and target dimensions differ");
        }
        if proposal.is_dirac() {
            return config("limit kernels need a proposal that moves");
        }
        Ok(())
    }

    /// Supply an upper bound on the log weight, enabling rejection sampling.
    pub fn with_log_sup(mut self, bound: f64) -> Self {
        match &mut self.kind {
            LimitKind::BubbleBath { log_sup, .. } | LimitKind::Tjelmeland { log_sup, .. } => *log_sup = Some(bound),
            _ => {}
        }
        self
    }

    fn log_weight(&self, weight: BetaChoice, x: &[f64]) -> f64 {
        match weight {
            BetaChoice::BubblePotential => -self.target.potential(x),
            _ => self.target.log_density(x),
        }
    }

    fn draw_bubble(&self, center: &[f64], weight: BetaChoice, log_sup: Option<f64>, streams: &StepStreams) -> Result<Vec<f64>> {
        if let Some(sup) = log_sup {
            let mut rng = streams.stream(Purpose::Exact, 0);
            for _ in 0..MAX_REJECTION_ATTEMPTS {
                let x = self.proposal.draw(center, &mut rng)?;
                let lw = self.log_weight(weight, &x);
                if lw > sup + 1e-9 {
                    return Err(Error::Numerical(format!("weight bound {sup} exceeded by {lw}")));
                }
                if rng.random::<f64>().ln() < lw - sup {
                    return Ok(x);
                }
            }
        }
        let pool: Vec<Vec<f64>> = (0..FALLBACK_POOL)
            .map(|i| self.proposal.draw(center, &mut streams.stream(Purpose::Replicate, i as u64)))
            .collect::<Result<_>>()?;
        let lw: Vec<f64> = pool.iter().map(|x| self.log_weight(weight, x)).collect();
        let probs = normalize_log_weights(&lw)?;
        let max_weight = probs.iter().copied().fold(0.0, f64::max);
        if max_weight > FALLBACK_MAX_WEIGHT {
            return Err(Error::EffectiveSample { max_weight, limit: FALLBACK_MAX_WEIGHT });
        }
        let j = select_interval(&probs, streams.uniform(Purpose::Select, 0));
        Ok(pool[j].clone())
    }

    /// One draw from the limit law started at `q0`.
    pub fn draw(&self, q0: &[f64], streams: &StepStreams) -> Result<Vec<f64>> {
        if q0.len() != self.target.dim {
            return param("starting point has the wrong dimension");
        }
        match &self.kind {
            LimitKind::Slingshot => self.target.sample_exact(&mut streams.stream(Purpose::Exact, 0)),
            LimitKind::BubbleBath { weight, log_sup } => self.draw_bubble(q0, *weight, *log_sup, streams),
            LimitKind::Tjelmeland { weight, log_sup } => {
                let center = self.proposal.draw(q0, &mut streams.stream(Purpose::Preliminary, 0))?;
                self.draw_bubble(&center, *weight, *log_sup, streams)
            }
            LimitKind::HmcRandomTime(k) => Ok(k.step(q0, streams)?.next),
        }
    }

    /// `n` independent draws from `q0`, replicate `i` keyed by `(seed, i)`.
    pub fn draw_many(&self, q0: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        (0..n).into_par_iter().map(|i| self.draw(q0, &StepStreams::standalone(seed, i as u64))).collect()
    }
}
