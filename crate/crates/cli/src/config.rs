//! Experiment files.

use std::path::Path;
use std::sync::Arc;

use madprops::adaptation::AdaptPolicy;
use madprops::chain::Observable;
use madprops::config::{observable_fits, parse_observable, KernelConfig};
use madprops::targets::{TargetModel, TargetSpec};
use serde::{Deserialize, Serialize};

/// Failure to read or validate an experiment file (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn default_n() -> usize {
    1000
}
fn one() -> usize {
    1
}
fn default_observables() -> Vec<String> {
    vec!["q1".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub target: TargetSpec,
    pub kernel: KernelConfig,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial state; defaults to the origin.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
    /// Scale adaptation during burn-in.
    #[serde(default)]
    pub adapt: Option<AdaptPolicy>,
    /// Also write per-step cloud-weighted values.
    #[serde(default)]
    pub write_rb: bool,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub tune: Option<TuneConfig>,
    #[serde(default)]
    pub limitcheck: Option<LimitCheckConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// One chain per replicate and grid point.
    Chain,
    /// Independent single transitions from a fixed state.
    Onestep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub p: Option<Vec<usize>>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub replicates: usize,
    pub mode: SweepMode,
    /// Starting state of one-step studies; defaults to the origin.
    #[serde(default)]
    pub q0: Option<Vec<f64>>,
    /// Independent transitions per replicate in one-step mode.
    #[serde(default = "one")]
    pub redraws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub target_rates: Vec<f64>,
    #[serde(default)]
    pub p: Option<Vec<usize>>,
    #[serde(default)]
    pub sigma0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tv,
    Ks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Exact draws from the target.
    Exact,
    /// The bubble-bath limit of the kernel's proposal and weight.
    BubbleBath,
    /// The convolutional limit of the kernel's proposal and weight.
    Tjelmeland,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitCheckConfig {
    pub p: Vec<usize>,
    pub q0: Vec<f64>,
    /// Draws per sample.
    pub n: usize,
    #[serde(default)]
    pub bins: Option<usize>,
    pub metric: Metric,
    pub reference: Reference,
    /// Zero-based coordinate compared.
    #[serde(default)]
    pub coordinate: usize,
    /// Supplied bound on the log weight for bubble-bath rejection sampling.
    #[serde(default)]
    pub log_sup: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    Tune,
    Limitcheck,
}

/// A parsed, validated experiment.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub target: Arc<TargetModel>,
    pub observables: Vec<Observable>,
    pub start: Vec<f64>,
}

impl Experiment {
    pub fn load(path: &Path, command: Command, seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Self::validate(cfg, command)
    }

    pub fn validate(cfg: ExperimentConfig, command: Command) -> Result<Self, ConfigError> {
        let target = Arc::new(cfg.target.build().map_err(|e| ConfigError(e.to_string()))?);
        let d = target.dim;
        let start = cfg.start.clone().unwrap_or_else(|| vec![0.0; d]);
        if start.len() != d {
            return bad(format!("start has {} coordinates, target has {d}", start.len()));
        }
        let mut observables = Vec::new();
        for name in &cfg.observables {
            if !observable_fits(name, d) {
                return bad(format!("observable `{name}` does not fit dimension {d}"));
            }
            observables.push(parse_observable(name).map_err(|e| ConfigError(e.to_string()))?);
        }
        if cfg.chains == 0 {
            return bad("chains must be at least 1");
        }
        if cfg.burn_in > cfg.n {
            return bad("burn_in cannot exceed n");
        }
        let build = |k: &KernelConfig| k.build(&target).map(|_| ()).map_err(|e| ConfigError(e.to_string()));
        build(&cfg.kernel)?;
        if let Some(a) = &cfg.adapt {
            a.validate().map_err(|e| ConfigError(e.to_string()))?;
            if cfg.kernel.proposal.scale().is_none() {
                return bad("adaptation needs a proposal with a scale");
            }
        }
        match command {
            Command::Run => {}
            Command::Sweep => {
                let s = cfg.sweep.as_ref().ok_or_else(|| ConfigError("sweep command needs a `sweep` section".into()))?;
                if s.p.as_ref().is_some_and(Vec::is_empty) || s.sigma.as_ref().is_some_and(Vec::is_empty) {
                    return bad("sweep lists must not be empty");
                }
                if s.p.is_none() && s.sigma.is_none() {
                    return bad("sweep needs a p list, a sigma list, or both");
                }
                if s.replicates == 0 {
                    return bad("sweep needs at least one replicate");
                }
                if s.q0.as_ref().is_some_and(|q| q.len() != d) {
                    return bad("sweep q0 has the wrong dimension");
                }
                for k in sweep_grid(&cfg.kernel, s)? {
                    build(&k.2)?;
                }
            }
            Command::Tune => {
                let t = cfg.tune.as_ref().ok_or_else(|| ConfigError("tune command needs a `tune` section".into()))?;
                if t.target_rates.is_empty() || t.p.as_ref().is_some_and(Vec::is_empty) {
                    return bad("tune lists must not be empty");
                }
                for &r in &t.target_rates {
                    AdaptPolicy::new(r).map_err(|e| ConfigError(e.to_string()))?;
                }
                let sigma0 = t.sigma0.or(cfg.kernel.proposal.scale()).ok_or_else(|| ConfigError("tuning needs a proposal with a scale".into()))?;
                for p in t.p.clone().unwrap_or_else(|| vec![cfg.kernel.p]) {
                    build(&cfg.kernel.with_p(p).with_scale(sigma0).map_err(|e| ConfigError(e.to_string()))?)?;
                }
                if cfg.burn_in == 0 {
                    return bad("tuning adapts during burn_in, which must be positive");
                }
            }
            Command::Limitcheck => {
                let l = cfg.limitcheck.as_ref().ok_or_else(|| ConfigError("limitcheck command needs a `limitcheck` section".into()))?;
                if l.p.len() < 2 {
                    return bad("the log-log slope needs at least two values of p");
                }
                if l.q0.len() != d || l.coordinate >= d {
                    return bad("limitcheck q0 or coordinate does not fit the target");
                }
                if l.n < 10 {
                    return bad("limitcheck needs at least 10 draws");
                }
                if let Some(b) = l.bins {
                    if b == 0 || b * b > l.n {
                        return bad("bins must be between 1 and the square root of n");
                    }
                }
                for &p in &l.p {
                    build(&cfg.kernel.with_p(p))?;
                }
            }
        }
        Ok(Self { cfg, target, observables, start })
    }
}

/// Grid points `(p, sigma, kernel)` of a sweep in output order.
pub fn sweep_grid(kernel: &KernelConfig, s: &SweepConfig) -> Result<Vec<(usize, Option<f64>, KernelConfig)>, ConfigError> {
    let ps = s.p.clone().unwrap_or_else(|| vec![kernel.p]);
    let sigmas: Vec<Option<f64>> = match &s.sigma {
        Some(v) => v.iter().map(|&x| Some(x)).collect(),
        None => vec![kernel.proposal.scale()],
    };
    let mut out = Vec::new();
    for &p in &ps {
        for &sig in &sigmas {
            let k = match (s.sigma.is_some(), sig) {
                (true, Some(v)) => kernel.with_p(p).with_scale(v).map_err(|e| ConfigError(e.to_string()))?,
                _ => kernel.with_p(p),
            };
            out.push((p, sig, k));
        }
    }
    Ok(out)
}
