//! Running kernels into traces, and the estimators built on them.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::kernels::{Family, TransitionKernel};
use crate::math::variance;
use crate::rng::{ChainStreams, StepStreams};

/// A named scalar function of the state.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.name)
    }
}

impl Observable {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// `q_k` (zero-based coordinate).
    pub fn coordinate(k: usize) -> Self {
        Self::new(format!("q{}", k + 1), move |q: &[f64]| q[k])
    }

    /// `q_k^power`.
    pub fn coordinate_power(k: usize, power: i32) -> Self {
        Self::new(format!("q{}^{}", k + 1, power), move |q: &[f64]| q[k].powi(power))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_: &[f64]| c)
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        (self.f)(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChainOptions {
    /// Keep every `(α_l, φ(q_l))` pair, not only their per-step sums.
    pub store_rb_rows: bool,
}

/// Per-step `(weight, value)` pairs for each observable.
pub type RbRows = Vec<Vec<(f64, f64)>>;

#[derive(Debug, Clone)]
pub struct ChainTrace {
    /// `n + 1` states, starting with the initial point.
    pub states: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub observables: Vec<String>,
    /// `rb_values[o][k]`: conditional mean of observable `o` over step `k`.
    pub rb_values: Vec<Vec<f64>>,
    /// `rb_rows[k][o]` when requested.
    pub rb_rows: Option<Vec<RbRows>>,
    pub seed: u64,
    pub chain: u64,
    pub n: usize,
    pub burn_in: usize,
}

impl ChainTrace {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// States after burn-in: `states[burn_in + 1 ..= n]`.
    pub fn post_burn_in(&self) -> &[Vec<f64>] {
        &self.states[(self.burn_in + 1).min(self.states.len())..]
    }

    pub fn series(&self, obs: &Observable) -> Vec<f64> {
        self.post_burn_in().iter().map(|q| obs.eval(q)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, |q| q.len());
        write!(w, "iter")?;
        for k in 0..d {
            write!(w, ",q_{}", k + 1)?;
        }
        writeln!(w, ",accepted")?;
        for (k, q) in self.states.iter().enumerate() {
            write!(w, "{k}")?;
            for x in q {
                write!(w, ",{}", fmt_float(*x))?;
            }
            let a = if k == 0 { false } else { self.accepted[k - 1] };
            writeln!(w, ",{}", a as u8)?;
        }
        Ok(())
    }

    pub fn write_rb_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,observable,rb_value")?;
        for k in 0..self.n {
            for (o, name) in self.observables.iter().enumerate() {
                writeln!(w, "{},{},{}", k + 1, name, fmt_float(self.rb_values[o][k]))?;
            }
        }
        Ok(())
    }
}

/// Seventeen significant digits, so values round-trip exactly.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run_chain(
    kernel: &TransitionKernel,
    q_init: &[f64],
    n: usize,
    burn_in: usize,
    observables: &[Observable],
    streams: ChainStreams,
    opts: ChainOptions,
) -> Result<ChainTrace> {
    if burn_in > n {
        return param("burn-in cannot exceed the iteration count");
    }
    if q_init.len() != kernel.dim() {
        return param("initial state has the wrong dimension");
    }
    let mut states = Vec::with_capacity(n + 1);
    states.push(q_init.to_vec());
    let mut accepted = Vec::with_capacity(n);
    let mut rb_values = vec![Vec::with_capacity(n); observables.len()];
    let mut rb_rows = opts.store_rb_rows.then(|| Vec::with_capacity(n));
    for k in 0..n {
        let q = states.last().expect("non-empty");
        let step = kernel
            .step(q, &streams.step(k as u64))
            .map_err(|e| Error::AtIteration { iteration: k, source: Box::new(e) })?;
        for (o, obs) in observables.iter().enumerate() {
            rb_values[o].push(step.record.rb_value(|x| obs.eval(x)));
        }
        if let Some(rows) = rb_rows.as_mut() {
            rows.push(observables.iter().map(|obs| step.record.rb_rows(|x| obs.eval(x))).collect());
        }
        accepted.push(step.record.accepted);
        states.push(step.next);
    }
    Ok(ChainTrace {
        states,
        accepted,
        observables: observables.iter().map(|o| o.name.clone()).collect(),
        rb_values,
        rb_rows,
        seed: streams.seed,
        chain: streams.chain,
        n,
        burn_in,
    })
}

/// Independent chains `0..inits.len()` run on the worker pool.
pub fn run_chains(
    kernel: &TransitionKernel,
    inits: &[Vec<f64>],
    n: usize,
    burn_in: usize,
    observables: &[Observable],
    seed: u64,
    opts: ChainOptions,
) -> Result<Vec<ChainTrace>> {
    inits
        .par_iter()
        .enumerate()
        .map(|(c, q)| run_chain(kernel, q, n, burn_in, observables, ChainStreams::new(seed, c as u64), opts))
        .collect()
}

/// Mean of `φ` over the post-burn-in states.
pub fn estimate_standard(trace: &ChainTrace, obs: &Observable) -> Result<f64> {
    let post = trace.post_burn_in();
    if post.is_empty() {
        return param("no states after burn-in");
    }
    Ok(post.iter().map(|q| obs.eval(q)).sum::<f64>() / post.len() as f64)
}

/// Cloud-weighted estimator `(1/n) Σ_k Σ_l α_l φ(q_l)` over post-burn-in steps.
pub fn estimate_rb(trace: &ChainTrace, obs: &Observable) -> Result<f64> {
    let o = trace
        .observables
        .iter()
        .position(|n| *n == obs.name)
        .ok_or_else(|| Error::Unsupported(format!("observable `{}` was not recorded", obs.name)))?;
    let vals = &trace.rb_values[o][trace.burn_in..];
    if vals.is_empty() {
        return param("no steps after burn-in");
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Variance across independent single steps from `q0` of the cloud-weighted
/// one-step estimator.
pub fn rb_onestep_variance(kernel: &TransitionKernel, q0: &[f64], replicates: usize, obs: &Observable, seed: u64) -> Result<f64> {
    if !matches!(kernel.spec().family, Family::Barker | Family::BarkerNoHold | Family::Convolutional) {
        return param("one-step variance is defined for Barker-type and convolutional kernels");
    }
    if replicates < 2 {
        return param("need at least two replicates");
    }
    let vals = (0..replicates)
        .into_par_iter()
        .map(|r| Ok(kernel.step(q0, &StepStreams::standalone(seed, r as u64))?.record.rb_value(|x| obs.eval(x))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(variance(&vals))
}
