//! Single-proposal kernels and the leapfrog integrator.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{param, Error, Result};
use crate::targets::TargetModel;

/// State-dependent proposal scale.
#[derive(Clone)]
pub enum ScaleFn {
    /// Closed-form slingshot scale for a spherical Gaussian with sd `sigma_pi`.
    Star { sigma_pi: f64 },
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl ScaleFn {
    pub fn eval(&self, q: &[f64]) -> f64 {
        match self {
            Self::Star { sigma_pi } => crate::adaptation::sigma_star(q, *sigma_pi),
            Self::Custom(f) => f(q),
        }
    }
}

impl fmt::Debug for ScaleFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Star { sigma_pi } => write!(f, "Star({sigma_pi})"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Clone)]
pub enum ProposalKind {
    /// `N(q0, σ² diag(spectrum))`.
    GaussianRw { sigma: f64, spectrum: Vec<f64> },
    /// `N(ρ q0, (1 − ρ²) diag(spectrum))`.
    Pcn { rho: f64, spectrum: Vec<f64> },
    /// `N(mean, σ² I)` regardless of the current state.
    StateIndependent { mean: Vec<f64>, sigma: f64 },
    /// `N(q0, σ_f(q0)² I)`.
    StateDependentRw { scale: ScaleFn },
    /// Euler–Maruyama step of the overdamped Langevin diffusion.
    LangevinEm { sigma: f64, target: Arc<TargetModel> },
    /// `N(ρ q0 − (1 − ρ) C∇Φ(q0), (1 − ρ²) C)`.
    InfMalaCn { rho: f64, spectrum: Vec<f64>, target: Arc<TargetModel> },
    DiracIdentity,
}

impl fmt::Debug for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GaussianRw { sigma, spectrum } => write!(f, "GaussianRw(σ={sigma}, C={spectrum:?})"),
            Self::Pcn { rho, spectrum } => write!(f, "Pcn(ρ={rho}, C={spectrum:?})"),
            Self::StateIndependent { mean, sigma } => write!(f, "StateIndependent(m={mean:?}, σ={sigma})"),
            Self::StateDependentRw { scale } => write!(f, "StateDependentRw({scale:?})"),
            Self::LangevinEm { sigma, .. } => write!(f, "LangevinEm(σ={sigma})"),
            Self::InfMalaCn { rho, spectrum, .. } => write!(f, "InfMalaCn(ρ={rho}, C={spectrum:?})"),
            Self::DiracIdentity => f.write_str("DiracIdentity"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProposalKernel {
    pub kind: ProposalKind,
    pub dim: usize,
}

fn check_spectrum(spectrum: &[f64], d: usize) -> Result<()> {
    if spectrum.len() != d {
        return param("spectrum length must equal the dimension");
    }
    if spectrum.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return param("spectrum entries must be positive and finite");
    }
    Ok(())
}

fn gaussian_log_pdf(x: &[f64], mean: impl Iterator<Item = f64>, var: impl Iterator<Item = f64>) -> f64 {
    x.iter()
        .zip(mean.zip(var))
        .map(|(xi, (m, v))| -0.5 * (2.0 * PI * v).ln() - (xi - m) * (xi - m) / (2.0 * v))
        .sum()
}

impl ProposalKernel {
    pub fn gaussian_rw(d: usize, sigma: f64) -> Result<Self> {
        Self::gaussian_rw_with_spectrum(sigma, vec![1.0; d])
    }

    pub fn gaussian_rw_with_spectrum(sigma: f64, spectrum: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return param("random-walk sigma must be positive");
        }
        let d = spectrum.len();
        check_spectrum(&spectrum, d)?;
        Ok(Self { kind: ProposalKind::GaussianRw { sigma, spectrum }, dim: d })
    }

    pub fn pcn(rho: f64, spectrum: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return param("pCN requires rho in [0, 1]");
        }
        let d = spectrum.len();
        check_spectrum(&spectrum, d)?;
        Ok(Self { kind: ProposalKind::Pcn { rho, spectrum }, dim: d })
    }

    pub fn state_independent(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return param("independent proposal sigma must be positive");
        }
        let d = mean.len();
        Ok(Self { kind: ProposalKind::StateIndependent { mean, sigma }, dim: d })
    }

    pub fn state_dependent_rw(d: usize, scale: ScaleFn) -> Result<Self> {
        if let ScaleFn::Star { sigma_pi } = scale {
            if !(sigma_pi > 0.0) {
                return param("sigma_pi must be positive");
            }
        }
        Ok(Self { kind: ProposalKind::StateDependentRw { scale }, dim: d })
    }

    pub fn langevin(sigma: f64, target: Arc<TargetModel>) -> Result<Self> {
        if !(sigma > 0.0) {
            return param("Langevin sigma must be positive");
        }
        if target.grad_potential.is_none() {
            return Err(Error::Config("Langevin proposal needs a target gradient".into()));
        }
        let d = target.dim;
        Ok(Self { kind: ProposalKind::LangevinEm { sigma, target }, dim: d })
    }

    pub fn inf_mala(rho: f64, target: Arc<TargetModel>) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return param("infinite-dimensional MALA requires rho in [0, 1]");
        }
        if target.grad_potential.is_none() {
            return Err(Error::Config("infinite-dimensional MALA needs a target gradient".into()));
        }
        let spectrum = match target.reference.spectrum() {
            Some(s) => s.to_vec(),
            None => return Err(Error::Config("infinite-dimensional MALA needs a Gaussian reference".into())),
        };
        let d = target.dim;
        Ok(Self { kind: ProposalKind::InfMalaCn { rho, spectrum, target }, dim: d })
    }

    pub fn dirac(d: usize) -> Self {
        Self { kind: ProposalKind::DiracIdentity, dim: d }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self.kind, ProposalKind::DiracIdentity)
    }

    pub fn pcn_rho(&self) -> Option<f64> {
        match &self.kind {
            ProposalKind::Pcn { rho, .. } => Some(*rho),
            _ => None,
        }
    }

    /// Mean and per-coordinate variance of the Gaussian `Q(q0, ·)`.
    fn moments(&self, q0: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(match &self.kind {
            ProposalKind::GaussianRw { sigma, spectrum } => {
                (q0.to_vec(), spectrum.iter().map(|l| sigma * sigma * l).collect())
            }
            ProposalKind::Pcn { rho, spectrum } => {
                (q0.iter().map(|x| rho * x).collect(), spectrum.iter().map(|l| (1.0 - rho * rho) * l).collect())
            }
            ProposalKind::StateIndependent { mean, sigma } => (mean.clone(), vec![sigma * sigma; self.dim]),
            ProposalKind::StateDependentRw { scale } => {
                let s = scale.eval(q0);
                (q0.to_vec(), vec![s * s; self.dim])
            }
            ProposalKind::LangevinEm { sigma, target } => {
                let g = target.grad_log_density(q0)?;
                let h = 0.5 * sigma * sigma;
                (q0.iter().zip(&g).map(|(x, gx)| x + h * gx).collect(), vec![sigma * sigma; self.dim])
            }
            ProposalKind::InfMalaCn { rho, spectrum, target } => {
                let g = target.grad_potential(q0)?;
                let mean = q0
                    .iter()
                    .zip(g.iter().zip(spectrum))
                    .map(|(x, (gx, l))| rho * x - (1.0 - rho) * l * gx)
                    .collect();
                (mean, spectrum.iter().map(|l| (1.0 - rho * rho) * l).collect())
            }
            ProposalKind::DiracIdentity => (q0.to_vec(), vec![0.0; self.dim]),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, q0: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if self.is_dirac() {
            return Ok(q0.to_vec());
        }
        let (mean, var) = self.moments(q0)?;
        Ok(mean
            .iter()
            .zip(&var)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect())
    }

    /// Draw with a caller-supplied standard normal vector.
    pub fn draw_with_noise(&self, q0: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let (mean, var) = self.moments(q0)?;
        Ok(mean.iter().zip(var.iter().zip(xi)).map(|(m, (v, z))| m + v.sqrt() * z).collect())
    }

    pub fn draw_dyn(&self, q0: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.draw(q0, rng)
    }

    /// `log f(q0, q)` with respect to Lebesgue measure, normalizer included.
    pub fn log_density(&self, q0: &[f64], q: &[f64]) -> Result<f64> {
        match &self.kind {
            ProposalKind::DiracIdentity => {
                return Err(Error::Unsupported("Dirac proposal has no density".into()));
            }
            ProposalKind::Pcn { rho, .. } | ProposalKind::InfMalaCn { rho, .. } if *rho == 1.0 => {
                return Err(Error::Unsupported("proposal with rho = 1 is a point mass".into()));
            }
            _ => {}
        }
        let (mean, var) = self.moments(q0)?;
        Ok(gaussian_log_pdf(q, mean.into_iter(), var.into_iter()))
    }

    /// True when `f(a, b) = f(b, a)` for every pair.
    pub fn is_symmetric(&self) -> bool {
        matches!(self.kind, ProposalKind::GaussianRw { .. })
    }

    /// True when the proposal is reversible with respect to `N(0, diag(spectrum))`.
    pub fn preserves_gaussian(&self, spectrum: &[f64]) -> bool {
        match &self.kind {
            ProposalKind::Pcn { spectrum: s, .. } => s.as_slice() == spectrum,
            _ => false,
        }
    }

    /// Structural equality of kind and parameters, used for pairing checks.
    pub fn same_as(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ProposalKind::GaussianRw { sigma: a, spectrum: s }, ProposalKind::GaussianRw { sigma: b, spectrum: t }) => {
                a == b && s == t
            }
            (ProposalKind::Pcn { rho: a, spectrum: s }, ProposalKind::Pcn { rho: b, spectrum: t }) => a == b && s == t,
            (ProposalKind::DiracIdentity, ProposalKind::DiracIdentity) => true,
            _ => false,
        }
    }
}

/// Separable Hamiltonian `H(q, v) = U(q) + |v|²/2` with `U = −log π`.
#[derive(Clone, Debug)]
pub struct HamiltonianSystem {
    pub target: Arc<TargetModel>,
    /// Integration time `T`.
    pub time: f64,
}

/// A point `(q, v)` in phase space.
pub type PhasePoint = (Vec<f64>, Vec<f64>);

impl HamiltonianSystem {
    pub fn new(target: Arc<TargetModel>, time: f64) -> Result<Self> {
        if !(time > 0.0) || !time.is_finite() {
            return param("integration time must be positive");
        }
        if target.grad_potential.is_none() {
            return Err(Error::Config("Hamiltonian dynamics need a target gradient".into()));
        }
        Ok(Self { target, time })
    }

    pub fn energy(&self, q: &[f64], v: &[f64]) -> f64 {
        -self.target.log_density(q) + 0.5 * crate::math::norm_sq(v)
    }

    fn grad_u(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.target.grad_log_density(q)?;
        for x in g.iter_mut() {
            *x = -*x;
        }
        if g.iter().any(|x| x.is_nan()) {
            return Err(Error::Numerical("NaN gradient".into()));
        }
        Ok(g)
    }

    /// One velocity-Verlet step: half kick, drift, half kick.
    pub fn leapfrog_step(&self, q: &[f64], v: &[f64], dt: f64) -> Result<PhasePoint> {
        let g = self.grad_u(q)?;
        let mut v: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi - 0.5 * dt * gi).collect();
        let q: Vec<f64> = q.iter().zip(&v).map(|(qi, vi)| qi + dt * vi).collect();
        let g = self.grad_u(&q)?;
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= 0.5 * dt * gi;
        }
        Ok((q, v))
    }

    /// The `steps` intermediate points of integrating to time `self.time`,
    /// excluding the start.
    pub fn leapfrog_path(&self, q0: &[f64], v0: &[f64], steps: usize) -> Result<Vec<PhasePoint>> {
        self.integrate(q0, v0, self.time / steps as f64, steps)
    }

    /// `steps` leapfrog steps of size `dt`, returning every point after the start.
    pub fn integrate(&self, q0: &[f64], v0: &[f64], dt: f64, steps: usize) -> Result<Vec<PhasePoint>> {
        if steps == 0 {
            return param("leapfrog path needs at least one step");
        }
        let mut out = Vec::with_capacity(steps);
        let mut q = q0.to_vec();
        let mut v = v0.to_vec();
        let mut g = self.grad_u(&q)?;
        for _ in 0..steps {
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi -= 0.5 * dt * gi;
            }
            for (qi, vi) in q.iter_mut().zip(&v) {
                *qi += dt * vi;
            }
            g = self.grad_u(&q)?;
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi -= 0.5 * dt * gi;
            }
            out.push((q.clone(), v.clone()));
        }
        Ok(out)
    }

    /// End point only; avoids storing the path.
    pub fn integrate_end(&self, q0: &[f64], v0: &[f64], dt: f64, steps: usize) -> Result<PhasePoint> {
        let mut q = q0.to_vec();
        let mut v = v0.to_vec();
        if steps == 0 {
            return Ok((q, v));
        }
        let mut g = self.grad_u(&q)?;
        for _ in 0..steps {
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi -= 0.5 * dt * gi;
            }
            for (qi, vi) in q.iter_mut().zip(&v) {
                *qi += dt * vi;
            }
            g = self.grad_u(&q)?;
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi -= 0.5 * dt * gi;
            }
        }
        Ok((q, v))
    }
}
