//! Single-proposal Metropolis–Hastings baselines.

use crate::error::{Error, Result};
use crate::math::dot;
use crate::proposals::ProposalKind;
use crate::rng::{Purpose, StepStreams};

use super::{CloudRecord, Family, Step, TransitionKernel};

pub(super) fn log_accept_ratio(k: &TransitionKernel, q0: &[f64], q: &[f64]) -> Result<f64> {
    let t = k.target();
    let r = match (k.spec().family, &k.spec().proposal.kind) {
        (Family::SingleRwm, _) => t.log_density(q) - t.log_density(q0),
        (Family::SingleMala, ProposalKind::LangevinEm { sigma, .. }) => {
            let s2 = sigma * sigma;
            let g0 = t.grad_log_density(q0)?;
            let g1 = t.grad_log_density(q)?;
            let fwd: f64 = (0..q.len()).map(|i| (q[i] - q0[i] - 0.5 * s2 * g0[i]).powi(2)).sum();
            let rev: f64 = (0..q.len()).map(|i| (q0[i] - q[i] - 0.5 * s2 * g1[i]).powi(2)).sum();
            t.log_density(q) - rev / (2.0 * s2) - t.log_density(q0) + fwd / (2.0 * s2)
        }
        (Family::SinglePcn, _) => -t.potential(q) + t.potential(q0),
        (Family::SingleInfMala, ProposalKind::InfMalaCn { rho, spectrum, .. }) => {
            let g0 = t.grad_potential(q0)?;
            let g1 = t.grad_potential(q)?;
            let c_norm = |g: &[f64]| -> f64 { g.iter().zip(spectrum).map(|(x, l)| l * x * x).sum() };
            let shift = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - rho * y).collect() };
            let num = -t.potential(q) - (dot(&g1, &shift(q0, q)) + 0.5 * (1.0 - rho) * c_norm(&g1)) / (1.0 + rho);
            let den = -t.potential(q0) - (dot(&g0, &shift(q, q0)) + 0.5 * (1.0 - rho) * c_norm(&g0)) / (1.0 + rho);
            num - den
        }
        _ => return Err(Error::Config("not a single-proposal baseline".into())),
    };
    if r.is_nan() {
        return Err(Error::Numerical("NaN acceptance ratio".into()));
    }
    Ok(r)
}

pub(super) fn step_single(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let q = k.spec().proposal.draw(q0, &mut streams.stream(Purpose::Proposal, 1))?;
    let alpha = log_accept_ratio(k, q0, &q)?.min(0.0).exp();
    let accepted = streams.uniform(Purpose::Accept, 0) < alpha;
    let mut record = CloudRecord::hold(q0);
    record.points = vec![q0.to_vec(), q.clone()];
    record.log_weights = vec![f64::NEG_INFINITY, 0.0];
    record.probs = vec![0.0, 1.0];
    record.rb_weights = vec![1.0 - alpha, alpha];
    record.selected = 1;
    record.alpha_bar = Some(alpha);
    record.accepted = accepted;
    let next = if accepted { q } else { q0.to_vec() };
    Ok(Step { next, record })
}
