//! Multiproposal transition kernels.
//!
//! A [`TransitionKernel`] pairs a [`KernelSpec`] with a target and produces
//! one transition at a time. Every random number a step consumes comes from
//! the [`StepStreams`] it is handed, keyed by purpose and proposal index, so
//! a step is a pure function of `(q0, streams)`.

mod barker;
mod hmc;
mod metropolis;
mod mtm;
mod naive;
mod single;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, param, Error, Result};
use crate::proposals::{HamiltonianSystem, ProposalKernel, ProposalKind};
use crate::rng::StepStreams;
use crate::targets::TargetModel;

pub use mtm::MtmAcceptance;

/// Work below this many items per step stays on the calling thread.
const PARALLEL_MIN: usize = 128;

/// Default number of fine leapfrog steps used for the continuous-time flow.
pub const DEFAULT_FINE_STEPS: usize = 4096;

/// Default cap on the cloud size of the quadratic-cost reversible kernel.
pub const DEFAULT_NAIVE_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Barker,
    BarkerNoHold,
    MetropolisDegenerate,
    Mtm,
    Convolutional,
    NaiveUnbiased,
    HmcMetropolis,
    HmcBarker,
    SingleRwm,
    SingleMala,
    SinglePcn,
    SingleInfMala,
    SingleHmcRandomTime,
}

impl Family {
    pub fn is_single(self) -> bool {
        matches!(self, Self::SingleRwm | Self::SingleMala | Self::SinglePcn | Self::SingleInfMala)
    }
}

/// Relative selection weight `β(q̃, q0)`, always evaluated in log space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaChoice {
    /// Lebesgue target density `π(q̃)`.
    BubbleBath,
    /// `exp(−Φ(q̃))`, the density relative to the reference measure.
    BubblePotential,
    /// `√(π(q̃)/π(q0))`.
    LocalSqrt,
    /// `exp(−ρ/(1+ρ) (Φ(q̃/ρ) − Φ(q0)))` for a pCN proposal with parameter ρ.
    LocalPcn,
    /// `π(q̃) / f(q0, q̃)`.
    Slingshot,
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub family: Family,
    pub beta: Option<BetaChoice>,
    pub proposal: ProposalKernel,
    /// Preliminary kernel of the convolutional family.
    pub preliminary: Option<ProposalKernel>,
    pub p: usize,
    /// Integration time for the Hamiltonian families.
    pub hmc_time: Option<f64>,
    pub fine_steps: usize,
    /// Mixture weights `a_1..a_p`; defaults to `1/p` each.
    pub mixture_weights: Option<Vec<f64>>,
    pub naive_cap: usize,
}

impl KernelSpec {
    pub fn new(family: Family, beta: Option<BetaChoice>, proposal: ProposalKernel, p: usize) -> Self {
        Self {
            family,
            beta,
            proposal,
            preliminary: None,
            p,
            hmc_time: None,
            fine_steps: DEFAULT_FINE_STEPS,
            mixture_weights: None,
            naive_cap: DEFAULT_NAIVE_CAP,
        }
    }

    pub fn barker(beta: BetaChoice, proposal: ProposalKernel, p: usize) -> Self {
        Self::new(Family::Barker, Some(beta), proposal, p)
    }

    pub fn slingshot(proposal: ProposalKernel, p: usize) -> Self {
        Self::barker(BetaChoice::Slingshot, proposal, p)
    }

    pub fn mtm(beta: BetaChoice, proposal: ProposalKernel, p: usize) -> Self {
        Self::new(Family::Mtm, Some(beta), proposal, p)
    }

    pub fn mtpcn(rho: f64, spectrum: Vec<f64>, p: usize) -> Result<Self> {
        Ok(Self::mtm(BetaChoice::BubblePotential, ProposalKernel::pcn(rho, spectrum)?, p))
    }

    pub fn lmtpcn(rho: f64, spectrum: Vec<f64>, p: usize) -> Result<Self> {
        Ok(Self::mtm(BetaChoice::LocalPcn, ProposalKernel::pcn(rho, spectrum)?, p))
    }

    pub fn convolutional(beta: BetaChoice, preliminary: ProposalKernel, proposal: ProposalKernel, p: usize) -> Self {
        let mut s = Self::new(Family::Convolutional, Some(beta), proposal, p);
        s.preliminary = Some(preliminary);
        s
    }

    /// Multiproposal pCN: convolutional pCN cloud with potential weights.
    pub fn mpcn(rho: f64, spectrum: Vec<f64>, p: usize) -> Result<Self> {
        let q = ProposalKernel::pcn(rho, spectrum)?;
        Ok(Self::convolutional(BetaChoice::BubblePotential, q.clone(), q, p))
    }

    pub fn hmc(family: Family, d: usize, time: f64, p: usize) -> Self {
        let mut s = Self::new(family, None, ProposalKernel::dirac(d), p);
        s.hmc_time = Some(time);
        s
    }

    pub fn single(family: Family, proposal: ProposalKernel) -> Self {
        Self::new(family, None, proposal, 1)
    }

    pub fn with_mixture_weights(mut self, a: Vec<f64>) -> Self {
        self.mixture_weights = Some(a);
        self
    }
}

/// Summary of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudRecord {
    pub q0: Vec<f64>,
    pub preliminary: Option<Vec<f64>>,
    /// Candidate states; index 0 is always the current state.
    pub points: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    /// Selection probabilities over `points`.
    pub probs: Vec<f64>,
    pub selected: usize,
    /// Second-stage acceptance probability actually used.
    pub alpha_bar: Option<f64>,
    pub alpha_bar_full: Option<f64>,
    pub alpha_bar_reduced: Option<f64>,
    /// Closed form specific to the local pCN multiple-try kernel.
    pub alpha_bar_closed_form: Option<f64>,
    pub auxiliary: Vec<Vec<f64>>,
    /// Conditional law of the next state given this record, aligned with `points`.
    pub rb_weights: Vec<f64>,
    pub accepted: bool,
    pub degenerate: bool,
}

impl CloudRecord {
    fn hold(q0: &[f64]) -> Self {
        Self {
            q0: q0.to_vec(),
            preliminary: None,
            points: vec![q0.to_vec()],
            log_weights: vec![0.0],
            probs: vec![1.0],
            selected: 0,
            alpha_bar: None,
            alpha_bar_full: None,
            alpha_bar_reduced: None,
            alpha_bar_closed_form: None,
            auxiliary: Vec::new(),
            rb_weights: vec![1.0],
            accepted: false,
            degenerate: false,
        }
    }

    /// `Σ_l w_l φ(q_l)` over the conditional law of the next state.
    pub fn rb_value(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.rb_weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(q, w)| w * phi(q))
            .sum()
    }

    pub fn rb_rows(&self, phi: impl Fn(&[f64]) -> f64) -> Vec<(f64, f64)> {
        self.points.iter().zip(&self.rb_weights).map(|(q, &w)| (w, phi(q))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub next: Vec<f64>,
    pub record: CloudRecord,
}

/// Cached evaluations at an anchor point `q0`.
pub(crate) struct Anchor<'a> {
    pub q: &'a [f64],
    pub log_pi: f64,
    pub phi: f64,
}

impl<'a> Anchor<'a> {
    pub fn new(target: &TargetModel, q: &'a [f64]) -> Self {
        Self { q, log_pi: target.log_density(q), phi: target.potential(q) }
    }
}

/// A validated kernel bound to a target.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    spec: KernelSpec,
    target: Arc<TargetModel>,
    hmc: Option<HamiltonianSystem>,
    mixture: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(spec: KernelSpec, target: Arc<TargetModel>) -> Result<Self> {
        if spec.proposal.dim != target.dim {
            return config(format!(
                "proposal dimension {} does not match target dimension {}",
                spec.proposal.dim, target.dim
            ));
        }
        let mut mixture = Vec::new();
        let mut hmc = None;
        let needs_beta = matches!(spec.family, Family::Barker | Family::BarkerNoHold | Family::Mtm | Family::Convolutional);
        if needs_beta && spec.beta.is_none() {
            return config("this kernel family needs a selection weight choice");
        }
        match spec.family {
            Family::Mtm | Family::NaiveUnbiased | Family::MetropolisDegenerate | Family::HmcBarker | Family::HmcMetropolis | Family::BarkerNoHold => {
                if spec.p == 0 {
                    return param("this kernel family needs p >= 1");
                }
            }
            _ => {}
        }
        if let Some(beta) = spec.beta {
            validate_beta(beta, &spec.proposal, &target)?;
        }
        match spec.family {
            Family::MetropolisDegenerate | Family::HmcMetropolis => {
                mixture = match &spec.mixture_weights {
                    Some(a) => a.clone(),
                    None => vec![1.0 / spec.p as f64; spec.p],
                };
                if mixture.len() != spec.p {
                    return param("need one mixture weight per proposal");
                }
                if mixture.iter().any(|&a| !(a >= 0.0)) {
                    return param("mixture weights must be non-negative");
                }
                if mixture.iter().sum::<f64>() > 1.0 + 1e-12 {
                    return param("mixture weights must sum to at most one");
                }
                if spec.family == Family::MetropolisDegenerate && spec.beta.is_none() {
                    return config("Metropolis-type multiproposal needs a selection weight choice");
                }
            }
            Family::Convolutional => {
                let pre = spec
                    .preliminary
                    .as_ref()
                    .ok_or_else(|| Error::Config("convolutional kernel needs a preliminary proposal".into()))?;
                let ok = pre.is_dirac()
                    || (pre.same_as(&spec.proposal)
                        && matches!(spec.proposal.kind, ProposalKind::GaussianRw { .. } | ProposalKind::Pcn { .. }));
                if !ok {
                    return config("convolutional pairing must be a Dirac preliminary or identical random-walk or pCN kernels");
                }
            }
            Family::NaiveUnbiased => {
                if spec.p > spec.naive_cap {
                    return Err(Error::CostGuard { p: spec.p, cap: spec.naive_cap });
                }
                if spec.proposal.is_dirac() {
                    return config("the reversible quadratic-cost kernel needs a proposal density");
                }
            }
            _ => {}
        }
        match spec.family {
            Family::HmcBarker | Family::HmcMetropolis | Family::SingleHmcRandomTime => {
                let t = spec
                    .hmc_time
                    .ok_or_else(|| Error::Config("Hamiltonian kernels need an integration time".into()))?;
                hmc = Some(HamiltonianSystem::new(target.clone(), t)?);
                if spec.family == Family::SingleHmcRandomTime && spec.fine_steps < 1000 {
                    return param("random-time flow needs at least 1000 fine steps");
                }
            }
            Family::SingleRwm => {
                if !spec.proposal.is_symmetric() {
                    return config("random-walk Metropolis needs a symmetric proposal");
                }
            }
            Family::SingleMala => {
                if !matches!(spec.proposal.kind, ProposalKind::LangevinEm { .. }) {
                    return config("MALA needs a Langevin proposal");
                }
            }
            Family::SinglePcn => match (&spec.proposal.kind, target.reference.spectrum()) {
                (ProposalKind::Pcn { spectrum, .. }, Some(s)) if spectrum.as_slice() == s => {}
                _ => return config("pCN needs a pCN proposal matching the target's Gaussian reference"),
            },
            Family::SingleInfMala => {
                if !matches!(spec.proposal.kind, ProposalKind::InfMalaCn { .. }) {
                    return config("infinite-dimensional MALA needs its own proposal kind");
                }
            }
            _ => {}
        }
        Ok(Self { spec, target, hmc, mixture })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn target(&self) -> &Arc<TargetModel> {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim
    }

    pub fn step(&self, q0: &[f64], streams: &StepStreams) -> Result<Step> {
        match self.spec.family {
            Family::Barker => barker::step_barker(self, q0, streams, false),
            Family::BarkerNoHold => barker::step_barker(self, q0, streams, true),
            Family::Convolutional => barker::step_convolutional(self, q0, streams),
            Family::MetropolisDegenerate => metropolis::step_metropolis_degenerate(self, q0, streams),
            Family::Mtm => mtm::step_mtm(self, q0, streams),
            Family::NaiveUnbiased => naive::step_naive_unbiased(self, q0, streams),
            Family::HmcBarker | Family::HmcMetropolis => hmc::step_hmc_multiproposal(self, q0, streams),
            Family::SingleHmcRandomTime => hmc::step_hmc_random_time(self, q0, streams),
            Family::SingleRwm | Family::SingleMala | Family::SinglePcn | Family::SingleInfMala => {
                single::step_single(self, q0, streams)
            }
        }
    }

    /// Log of the single-proposal acceptance ratio for the baseline families.
    pub fn single_log_accept_ratio(&self, q0: &[f64], q: &[f64]) -> Result<f64> {
        single::log_accept_ratio(self, q0, q)
    }

    /// Whether `β(q̃,q0) Q(q0,dq̃) μ(dq0)` is symmetric, so that the
    /// multiple-try acceptance reduces to a ratio of weight sums.
    pub fn balance_holds(&self) -> bool {
        match self.spec.beta {
            Some(b) => balance_holds(b, &self.spec.proposal, &self.target),
            None => false,
        }
    }

    pub(crate) fn log_beta(&self, x: &[f64], anchor: &Anchor<'_>) -> Result<f64> {
        let t = &self.target;
        let v = match self.spec.beta.expect("validated") {
            BetaChoice::BubbleBath => t.log_density(x),
            BetaChoice::BubblePotential => -t.potential(x),
            BetaChoice::LocalSqrt => 0.5 * (t.log_density(x) - anchor.log_pi),
            BetaChoice::LocalPcn => {
                let rho = self.spec.proposal.pcn_rho().expect("validated");
                let scaled: Vec<f64> = x.iter().map(|v| v / rho).collect();
                -rho / (1.0 + rho) * (t.potential(&scaled) - anchor.phi)
            }
            BetaChoice::Slingshot => t.log_density(x) - self.spec.proposal.log_density(anchor.q, x)?,
        };
        if v.is_nan() {
            return Err(Error::Numerical("NaN selection weight".into()));
        }
        Ok(v)
    }

    /// `log dη⊥/dη (q0, r)`: the reversed-pair density ratio.
    pub(crate) fn log_reversal_ratio(&self, q0: &Anchor<'_>, r: &Anchor<'_>) -> Result<f64> {
        let prop = &self.spec.proposal;
        if prop.is_symmetric() {
            return Ok(r.log_pi - q0.log_pi);
        }
        if let Some(s) = self.target.reference.spectrum() {
            if prop.preserves_gaussian(s) {
                return Ok(-r.phi + q0.phi);
            }
        }
        Ok(prop.log_density(r.q, q0.q)? + r.log_pi - prop.log_density(q0.q, r.q)? - q0.log_pi)
    }

    pub(crate) fn mixture(&self) -> &[f64] {
        &self.mixture
    }

    pub(crate) fn hmc(&self) -> &HamiltonianSystem {
        self.hmc.as_ref().expect("validated")
    }
}

fn validate_beta(beta: BetaChoice, proposal: &ProposalKernel, target: &TargetModel) -> Result<()> {
    match beta {
        BetaChoice::Slingshot => {
            if proposal.is_dirac() {
                return config("slingshot weights need a proposal with a density");
            }
            if matches!(proposal.kind, ProposalKind::Pcn { rho, .. } if rho == 1.0) {
                return config("slingshot weights need a proposal with a density");
            }
        }
        BetaChoice::LocalPcn => match proposal.pcn_rho() {
            None => return config("local pCN weights need a pCN proposal"),
            Some(r) if r == 0.0 => return param("local pCN weights need rho > 0"),
            Some(_) => {
                if !target.has_gaussian_reference() {
                    return config("local pCN weights need a target with a Gaussian reference");
                }
            }
        },
        BetaChoice::BubblePotential => {
            if proposal.pcn_rho().is_some() && !target.has_gaussian_reference() {
                return config("pCN clouds with potential weights need a target with a Gaussian reference");
            }
        }
        BetaChoice::BubbleBath | BetaChoice::LocalSqrt => {}
    }
    Ok(())
}

pub(crate) fn balance_holds(beta: BetaChoice, proposal: &ProposalKernel, target: &TargetModel) -> bool {
    match beta {
        BetaChoice::Slingshot => true,
        BetaChoice::BubbleBath | BetaChoice::LocalSqrt => proposal.is_symmetric(),
        BetaChoice::BubblePotential => match target.reference.spectrum() {
            None => proposal.is_symmetric(),
            Some(s) => proposal.preserves_gaussian(s),
        },
        BetaChoice::LocalPcn => false,
    }
}

/// Evaluate `f(i)` for `i` in `0..n`, in order, on the pool when `n` is large.
pub(crate) fn indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if n >= PARALLEL_MIN {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
