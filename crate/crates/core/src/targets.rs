//! Target distributions written as a potential over a reference measure.
//!
//! A target with a Lebesgue reference has unnormalized density `exp(-Φ(q))`.
//! With a zero-mean Gaussian reference `N(0, diag(λ))` the density relative
//! to that Gaussian is `exp(-Φ(q))`, so the Lebesgue log-density is
//! `-Φ(q) - ½ Σ q_k² / λ_k` up to a constant.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::math::{logsumexp, norm_sq};

pub type PotentialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMeasure {
    Lebesgue,
    /// `N(0, diag(spectrum))`.
    GaussianZeroMean { spectrum: Vec<f64> },
}

impl ReferenceMeasure {
    pub fn gaussian(spectrum: Vec<f64>) -> Result<Self> {
        if spectrum.is_empty() || spectrum.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return param("covariance spectrum must be non-empty, finite and strictly positive");
        }
        Ok(Self::GaussianZeroMean { spectrum })
    }

    pub fn spectrum(&self) -> Option<&[f64]> {
        match self {
            Self::Lebesgue => None,
            Self::GaussianZeroMean { spectrum } => Some(spectrum),
        }
    }

    fn quadratic(&self, q: &[f64]) -> f64 {
        match self {
            Self::Lebesgue => 0.0,
            Self::GaussianZeroMean { spectrum } => {
                0.5 * q.iter().zip(spectrum).map(|(x, l)| x * x / l).sum::<f64>()
            }
        }
    }
}

#[derive(Clone)]
pub struct TargetModel {
    pub dim: usize,
    pub potential: PotentialFn,
    pub grad_potential: Option<GradientFn>,
    pub reference: ReferenceMeasure,
    pub exact_sampler: Option<SamplerFn>,
    /// Log of the Lebesgue normalizer of `exp(log_density)`, when known.
    pub log_norm_const: Option<f64>,
    /// Upper bound on `log_density` over the whole space, when known.
    pub log_density_sup: Option<f64>,
    pub name: String,
}

impl fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("reference", &self.reference)
            .field("has_gradient", &self.grad_potential.is_some())
            .field("has_exact_sampler", &self.exact_sampler.is_some())
            .field("log_norm_const", &self.log_norm_const)
            .finish()
    }
}

impl TargetModel {
    pub fn potential(&self, q: &[f64]) -> f64 {
        (self.potential)(q)
    }

    pub fn grad_potential(&self, q: &[f64]) -> Result<Vec<f64>> {
        match &self.grad_potential {
            Some(g) => Ok(g(q)),
            None => Err(Error::Config(format!("target `{}` has no gradient", self.name))),
        }
    }

    /// Unnormalized Lebesgue log-density.
    pub fn log_density(&self, q: &[f64]) -> f64 {
        -self.potential(q) - self.reference.quadratic(q)
    }

    /// Lebesgue log-density normalized with `log_norm_const` when it is known.
    pub fn normalized_log_density(&self, q: &[f64]) -> f64 {
        self.log_density(q) - self.log_norm_const.unwrap_or(0.0)
    }

    pub fn grad_log_density(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.grad_potential(q)?;
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = -*gk;
            if let Some(s) = self.reference.spectrum() {
                *gk -= q[k] / s[k];
            }
        }
        Ok(g)
    }

    pub fn has_gaussian_reference(&self) -> bool {
        matches!(self.reference, ReferenceMeasure::GaussianZeroMean { .. })
    }

    pub fn sample_exact(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        match &self.exact_sampler {
            Some(s) => Ok(s(rng)),
            None => Err(Error::Unsupported(format!("target `{}` has no exact sampler", self.name))),
        }
    }

    /// Re-express a Lebesgue target relative to `N(0, diag(spectrum))`.
    ///
    /// The measure itself is unchanged; only the split between potential and
    /// reference moves.
    pub fn with_gaussian_reference(&self, spectrum: Vec<f64>) -> Result<Self> {
        if self.has_gaussian_reference() {
            return param("target already has a Gaussian reference");
        }
        if spectrum.len() != self.dim {
            return param("spectrum length must equal the target dimension");
        }
        let reference = ReferenceMeasure::gaussian(spectrum.clone())?;
        let base = self.potential.clone();
        let s1 = spectrum.clone();
        let potential: PotentialFn = Arc::new(move |q: &[f64]| {
            base(q) - 0.5 * q.iter().zip(&s1).map(|(x, l)| x * x / l).sum::<f64>()
        });
        let grad_potential = self.grad_potential.clone().map(|g| {
            let s2 = spectrum.clone();
            Arc::new(move |q: &[f64]| {
                let mut out = g(q);
                for k in 0..out.len() {
                    out[k] -= q[k] / s2[k];
                }
                out
            }) as GradientFn
        });
        Ok(Self {
            potential,
            grad_potential,
            reference,
            name: format!("{}@gaussian-ref", self.name),
            ..self.clone()
        })
    }
}

fn gaussian_sampler(mean: Vec<f64>, sd: Vec<f64>) -> SamplerFn {
    Arc::new(move |rng: &mut dyn RngCore| {
        mean.iter()
            .zip(&sd)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    })
}

/// Centered spherical Gaussian `N(0, σ² I_d)`.
pub fn gaussian_target(d: usize, sigma_pi: f64) -> Result<TargetModel> {
    if d == 0 {
        return param("dimension must be at least 1");
    }
    if !(sigma_pi > 0.0) || !sigma_pi.is_finite() {
        return param("sigma_pi must be positive");
    }
    let s2 = sigma_pi * sigma_pi;
    Ok(TargetModel {
        dim: d,
        potential: Arc::new(move |q: &[f64]| norm_sq(q) / (2.0 * s2)),
        grad_potential: Some(Arc::new(move |q: &[f64]| q.iter().map(|x| x / s2).collect())),
        reference: ReferenceMeasure::Lebesgue,
        exact_sampler: Some(gaussian_sampler(vec![0.0; d], vec![sigma_pi; d])),
        log_norm_const: Some(0.5 * d as f64 * (2.0 * PI * s2).ln()),
        log_density_sup: Some(0.0),
        name: format!("gaussian(d={d},sigma={sigma_pi})"),
    })
}

/// Product of `d` standard normals.
pub fn product_normal_target(d: usize) -> Result<TargetModel> {
    gaussian_target(d, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BananaParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "B")]
    pub bend: f64,
}

impl BananaParams {
    /// Strongly curved, tilted parameterization used for tuning studies.
    pub const TILTED: Self = Self { a: 0.005, b: 100.0, c: 0.05, bend: 0.1 };
    /// Mild two-dimensional banana.
    pub const MILD: Self = Self { a: 0.5, b: 1.0, c: 0.0, bend: 1.0 };

    pub fn potential(&self, q: &[f64]) -> f64 {
        let (x, y) = (q[0], q[1]);
        let r = y + self.bend * x * x - self.b * self.bend;
        self.a * x * x + self.c * x + 0.5 * r * r
    }
}

/// Two-dimensional tilted banana `Φ(q) = a q₁² + c q₁ + ½(q₂ + B q₁² − bB)²`.
pub fn banana_target(params: BananaParams) -> Result<TargetModel> {
    if !(params.a > 0.0) {
        return param("banana requires a > 0 for integrability");
    }
    let BananaParams { a, b, c, bend } = params;
    Ok(TargetModel {
        dim: 2,
        potential: Arc::new(move |q: &[f64]| params.potential(q)),
        grad_potential: Some(Arc::new(move |q: &[f64]| {
            let (x, y) = (q[0], q[1]);
            let r = y + bend * x * x - b * bend;
            vec![2.0 * a * x + c + 2.0 * bend * x * r, r]
        })),
        reference: ReferenceMeasure::Lebesgue,
        exact_sampler: None,
        // Gaussian in y, then a shifted Gaussian in x
        log_norm_const: Some(0.5 * (2.0 * PI).ln() + 0.5 * (PI / a).ln() + c * c / (4.0 * a)),
        // max over q of -(a x² + c x), attained on the ridge
        log_density_sup: Some(c * c / (4.0 * a)),
        name: format!("banana(a={a},b={b},c={c},B={bend})"),
    })
}

/// Isotropic Gaussian mixture `Σ_m w_m exp(−|q − c_m|²/(2τ²))`.
///
/// Weights need not be normalized.
pub fn gaussian_mixture_target(weights: Vec<f64>, centers: Vec<Vec<f64>>, tau: f64) -> Result<TargetModel> {
    if weights.is_empty() {
        return param("mixture needs at least one component");
    }
    if weights.len() != centers.len() {
        return param("weights and centers must have equal length");
    }
    if !(tau > 0.0) {
        return param("tau must be positive");
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return param("mixture weights must be positive");
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return param("centers must share a positive dimension");
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let tau2 = tau * tau;
    let lw = log_w.clone();
    let cs = centers.clone();
    let potential: PotentialFn = Arc::new(move |q: &[f64]| {
        let terms: Vec<f64> = lw
            .iter()
            .zip(&cs)
            .map(|(l, c)| l - q.iter().zip(c).map(|(x, m)| (x - m) * (x - m)).sum::<f64>() / (2.0 * tau2))
            .collect();
        -logsumexp(&terms)
    });
    let lw = log_w.clone();
    let cs = centers.clone();
    let grad: GradientFn = Arc::new(move |q: &[f64]| {
        let terms: Vec<f64> = lw
            .iter()
            .zip(&cs)
            .map(|(l, c)| l - q.iter().zip(c).map(|(x, m)| (x - m) * (x - m)).sum::<f64>() / (2.0 * tau2))
            .collect();
        let lse = logsumexp(&terms);
        let mut g = vec![0.0; q.len()];
        for (t, c) in terms.iter().zip(&cs) {
            let r = (t - lse).exp();
            for k in 0..q.len() {
                g[k] += r * (q[k] - c[k]) / tau2;
            }
        }
        g
    });
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let cs = centers.clone();
    let sampler: SamplerFn = Arc::new(move |rng: &mut dyn RngCore| {
        let u: f64 = rng.random();
        let m = crate::math::select_interval(&probs, u);
        cs[m]
            .iter()
            .map(|c| {
                let z: f64 = rng.sample(StandardNormal);
                c + tau * z
            })
            .collect()
    });
    Ok(TargetModel {
        dim: d,
        potential,
        grad_potential: Some(grad),
        reference: ReferenceMeasure::Lebesgue,
        exact_sampler: Some(sampler),
        log_norm_const: Some(total.ln() + 0.5 * d as f64 * (2.0 * PI * tau2).ln()),
        log_density_sup: Some(total.ln()),
        name: format!("mixture(M={},d={d},tau={tau})", weights.len()),
    })
}

/// Posterior of a linear-Gaussian model with prior `N(0, diag(prior))`,
/// identity forward map, data `y` and noise variance `noise`.
///
/// The potential is the negative log-likelihood `|q − y|²/(2·noise)` relative
/// to the Gaussian prior. The posterior is `N(m, diag(v))` with
/// `v_k = 1/(1/λ_k + 1/noise)` and `m_k = v_k y_k / noise`.
pub fn gaussian_posterior_target(prior: Vec<f64>, data: Vec<f64>, noise: f64) -> Result<TargetModel> {
    if prior.len() != data.len() {
        return param("prior spectrum and data must have equal length");
    }
    if !(noise > 0.0) {
        return param("noise variance must be positive");
    }
    let reference = ReferenceMeasure::gaussian(prior.clone())?;
    let d = prior.len();
    let (mean, var) = posterior_moments(&prior, &data, noise);
    let y = data.clone();
    let y2 = data.clone();
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let log_z_leb: f64 = {
        // ∫ exp(-|q-y|²/2n - Σ q²/2λ) dq, computed per coordinate
        (0..d)
            .map(|k| {
                let prec = 1.0 / prior[k] + 1.0 / noise;
                let b = data[k] / noise;
                0.5 * (2.0 * PI / prec).ln() + 0.5 * b * b / prec - 0.5 * data[k] * data[k] / noise
            })
            .sum()
    };
    Ok(TargetModel {
        dim: d,
        potential: Arc::new(move |q: &[f64]| {
            q.iter().zip(&y).map(|(x, m)| (x - m) * (x - m)).sum::<f64>() / (2.0 * noise)
        }),
        grad_potential: Some(Arc::new(move |q: &[f64]| q.iter().zip(&y2).map(|(x, m)| (x - m) / noise).collect())),
        reference,
        exact_sampler: Some(gaussian_sampler(mean, sd)),
        log_norm_const: Some(log_z_leb),
        log_density_sup: None,
        name: format!("gaussian-posterior(d={d})"),
    })
}

/// Analytic posterior mean and variance per coordinate.
pub fn posterior_moments(prior: &[f64], data: &[f64], noise: f64) -> (Vec<f64>, Vec<f64>) {
    let var: Vec<f64> = prior.iter().map(|l| 1.0 / (1.0 / l + 1.0 / noise)).collect();
    let mean = var.iter().zip(data).map(|(v, y)| v * y / noise).collect();
    (mean, var)
}

/// `Φ ≡ 0` relative to `N(0, diag(spectrum))`: the target is the reference.
pub fn reference_only_target(spectrum: Vec<f64>) -> Result<TargetModel> {
    let reference = ReferenceMeasure::gaussian(spectrum.clone())?;
    let d = spectrum.len();
    Ok(TargetModel {
        dim: d,
        potential: Arc::new(|_: &[f64]| 0.0),
        grad_potential: Some(Arc::new(move |_: &[f64]| vec![0.0; d])),
        reference,
        exact_sampler: Some(gaussian_sampler(vec![0.0; d], spectrum.iter().map(|l| l.sqrt()).collect())),
        log_norm_const: Some(spectrum.iter().map(|l| 0.5 * (2.0 * PI * l).ln()).sum()),
        log_density_sup: None,
        name: format!("reference-gaussian(d={d})"),
    })
}

/// Target configuration as it appears in experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum TargetConfig {
    Gaussian {
        d: usize,
        sigma: f64,
    },
    ProductNormal {
        d: usize,
    },
    Banana {
        a: f64,
        b: f64,
        c: f64,
        #[serde(rename = "B")]
        bend: f64,
    },
    Mixture {
        weights: Vec<f64>,
        centers: Vec<Vec<f64>>,
        tau: f64,
    },
    Posterior {
        prior: Vec<f64>,
        data: Vec<f64>,
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub target: TargetConfig,
    /// Re-express a Lebesgue target relative to this Gaussian reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_spectrum: Option<Vec<f64>>,
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetModel> {
        let t = match &self.target {
            TargetConfig::Gaussian { d, sigma } => gaussian_target(*d, *sigma)?,
            TargetConfig::ProductNormal { d } => product_normal_target(*d)?,
            TargetConfig::Banana { a, b, c, bend } => {
                banana_target(BananaParams { a: *a, b: *b, c: *c, bend: *bend })?
            }
            TargetConfig::Mixture { weights, centers, tau } => {
                gaussian_mixture_target(weights.clone(), centers.clone(), *tau)?
            }
            TargetConfig::Posterior { prior, data, noise } => {
                gaussian_posterior_target(prior.clone(), data.clone(), *noise)?
            }
        };
        match &self.reference_spectrum {
            Some(s) => t.with_gaussian_reference(s.clone()),
            None => Ok(t),
        }
    }
}
