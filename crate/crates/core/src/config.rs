//! Declarative kernel and observable descriptions for experiment files.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::Observable;
use crate::error::{config, Result};
use crate::kernels::{BetaChoice, Family, KernelSpec, TransitionKernel, DEFAULT_FINE_STEPS, DEFAULT_NAIVE_CAP};
use crate::proposals::{ProposalKernel, ScaleFn};
use crate::targets::TargetModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalConfig {
    GaussianRw {
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
    },
    /// Random walk with the closed-form state-dependent slingshot scale.
    SigmaStar { sigma_pi: f64 },
    /// pCN; the spectrum defaults to the target's Gaussian reference.
    Pcn {
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectrum: Option<Vec<f64>>,
    },
    StateIndependent { mean: Vec<f64>, sigma: f64 },
    Langevin { sigma: f64 },
    InfMala { rho: f64 },
    Dirac,
}

impl ProposalConfig {
    pub fn build(&self, target: &Arc<TargetModel>) -> Result<ProposalKernel> {
        let d = target.dim;
        let default_spectrum = || target.reference.spectrum().map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; d]);
        match self {
            Self::GaussianRw { sigma, spectrum: None } => ProposalKernel::gaussian_rw(d, *sigma),
            Self::GaussianRw { sigma, spectrum: Some(s) } => ProposalKernel::gaussian_rw_with_spectrum(*sigma, s.clone()),
            Self::SigmaStar { sigma_pi } => ProposalKernel::state_dependent_rw(d, ScaleFn::Star { sigma_pi: *sigma_pi }),
            Self::Pcn { rho, spectrum } => ProposalKernel::pcn(*rho, spectrum.clone().unwrap_or_else(default_spectrum)),
            Self::StateIndependent { mean, sigma } => ProposalKernel::state_independent(mean.clone(), *sigma),
            Self::Langevin { sigma } => ProposalKernel::langevin(*sigma, target.clone()),
            Self::InfMala { rho } => ProposalKernel::inf_mala(*rho, target.clone()),
            Self::Dirac => Ok(ProposalKernel::dirac(d)),
        }
    }

    /// The tunable scale, if the proposal has one.
    pub fn scale(&self) -> Option<f64> {
        match self {
            Self::GaussianRw { sigma, .. } | Self::StateIndependent { sigma, .. } | Self::Langevin { sigma } => Some(*sigma),
            _ => None,
        }
    }

    pub fn with_scale(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            Self::GaussianRw { sigma, .. } | Self::StateIndependent { sigma, .. } | Self::Langevin { sigma } => *sigma = s,
            _ => return config("this proposal has no scale to set"),
        }
        Ok(out)
    }
}

fn default_p() -> usize {
    1
}
fn default_fine() -> usize {
    DEFAULT_FINE_STEPS
}
fn default_cap() -> usize {
    DEFAULT_NAIVE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaChoice>,
    #[serde(default = "KernelConfig::default_proposal")]
    pub proposal: ProposalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preliminary: Option<ProposalConfig>,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc_time: Option<f64>,
    #[serde(default = "default_fine")]
    pub fine_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_weights: Option<Vec<f64>>,
    #[serde(default = "default_cap")]
    pub naive_cap: usize,
}

impl KernelConfig {
    fn default_proposal() -> ProposalConfig {
        ProposalConfig::Dirac
    }

    pub fn spec(&self, target: &Arc<TargetModel>) -> Result<KernelSpec> {
        let mut s = KernelSpec::new(self.family, self.beta, self.proposal.build(target)?, self.p);
        s.preliminary = self.preliminary.as_ref().map(|c| c.build(target)).transpose()?;
        s.hmc_time = self.hmc_time;
        s.fine_steps = self.fine_steps;
        s.mixture_weights = self.mixture_weights.clone();
        s.naive_cap = self.naive_cap;
        Ok(s)
    }

    pub fn build(&self, target: &Arc<TargetModel>) -> Result<TransitionKernel> {
        TransitionKernel::new(self.spec(target)?, target.clone())
    }

    pub fn with_p(&self, p: usize) -> Self {
        Self { p, ..self.clone() }
    }

    /// Set the proposal scale, and the preliminary scale when it mirrors the proposal.
    pub fn with_scale(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        if out.preliminary.as_ref() == Some(&out.proposal) {
            out.preliminary = Some(out.proposal.with_scale(s)?);
        }
        out.proposal = out.proposal.with_scale(s)?;
        Ok(out)
    }
}

/// Parse an observable name: `qK` (1-based coordinate), `qK^P`, or `norm`.
pub fn parse_observable(name: &str) -> Result<Observable> {
    if name == "norm" {
        return Ok(Observable::new("norm", |q: &[f64]| q.iter().map(|v| v * v).sum::<f64>().sqrt()));
    }
    let bad = || crate::Error::Config(format!("unknown observable `{name}`; expected qK, qK^P or norm"));
    let rest = name.strip_prefix('q').ok_or_else(bad)?;
    let (k, power) = match rest.split_once('^') {
        Some((k, p)) => (k, p.parse::<i32>().map_err(|_| bad())?),
        None => (rest, 1),
    };
    let k: usize = k.parse().map_err(|_| bad())?;
    if k == 0 {
        return Err(bad());
    }
    let mut o = Observable::coordinate_power(k - 1, power);
    o.name = name.to_string();
    Ok(o)
}

/// Check that an observable only touches coordinates below `dim`.
pub fn observable_fits(name: &str, dim: usize) -> bool {
    if name == "norm" {
        return true;
    }
    name.strip_prefix('q')
        .and_then(|r| r.split('^').next())
        .and_then(|k| k.parse::<usize>().ok())
        .is_some_and(|k| k >= 1 && k <= dim)
}
