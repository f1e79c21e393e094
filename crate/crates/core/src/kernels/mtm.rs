//! Two-stage multiple-try kernels.

use crate::error::{Error, Result};
use crate::math::{logsumexp, normalize_log_weights, select_interval};
use crate::rng::{Purpose, StepStreams};

use super::barker::draw_cloud;
use super::{indexed, Anchor, BetaChoice, CloudRecord, Step, TransitionKernel};

/// Every form of the second-stage acceptance computed for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtmAcceptance {
    /// General form including the reversed-pair density ratio.
    pub full: f64,
    /// Ratio of weight sums only; exact when the balance condition holds.
    pub reduced: f64,
    /// Closed form of the local pCN variant, when applicable.
    pub closed_form: Option<f64>,
}

fn clamp_prob(log_ratio: f64) -> Result<f64> {
    if log_ratio.is_nan() {
        return Err(Error::Numerical("NaN acceptance ratio".into()));
    }
    Ok(log_ratio.min(0.0).exp())
}

pub(super) fn step_mtm(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let spec = k.spec();
    let target = k.target();
    let local_pcn = spec.beta == Some(BetaChoice::LocalPcn);
    let rho = spec.proposal.pcn_rho();

    if local_pcn && rho == Some(1.0) {
        // pCN with rho = 1 is the identity; every proposal equals q0
        let mut record = CloudRecord::hold(q0);
        record.degenerate = true;
        return Ok(Step { next: q0.to_vec(), record });
    }

    let cloud = draw_cloud(k, q0, streams, Purpose::Proposal)?;
    let at_q0 = Anchor::new(target, q0);
    let lw = indexed(cloud.len(), |j| k.log_beta(&cloud[j], &at_q0))?;
    let prelim = normalize_log_weights(&lw)?;
    let j = select_interval(&prelim, streams.uniform(Purpose::Select, 0));
    let chosen = &cloud[j];

    let p = spec.p;
    let prop = &spec.proposal;
    let aux = indexed(p - 1, |l| {
        let mut rng = streams.stream(Purpose::Auxiliary, (l + 1) as u64);
        prop.draw(chosen, &mut rng)
    })?;
    let at_sel = Anchor::new(target, chosen);
    let back = k.log_beta(q0, &at_sel)?;
    let aux_lw = indexed(aux.len(), |l| k.log_beta(&aux[l], &at_sel))?;

    let forward_sum = logsumexp(&lw);
    let mut reverse_terms = Vec::with_capacity(p);
    reverse_terms.push(back);
    reverse_terms.extend_from_slice(&aux_lw);
    let reverse_sum = logsumexp(&reverse_terms);

    let log_reduced = forward_sum - reverse_sum;
    let log_full = k.log_reversal_ratio(&at_q0, &at_sel)? + back - lw[j] + log_reduced;

    let closed_form = if local_pcn {
        let rho = rho.expect("validated");
        let c = rho / (1.0 + rho);
        let scaled = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v / rho).collect() };
        let w = |x: &[f64]| -c * target.potential(&scaled(x));
        let num: Vec<f64> = cloud.iter().map(|x| w(x)).collect();
        let mut den = vec![w(q0)];
        den.extend(aux.iter().map(|x| w(x)));
        let prefactor = (-at_sel.phi - c * target.potential(&scaled(q0))) - (-at_q0.phi - c * target.potential(&scaled(chosen)));
        Some(clamp_prob(prefactor + logsumexp(&num) - logsumexp(&den))?)
    } else {
        None
    };

    let acc = MtmAcceptance { full: clamp_prob(log_full)?, reduced: clamp_prob(log_reduced)?, closed_form };
    let alpha = match acc.closed_form {
        Some(a) => a,
        None if k.balance_holds() => acc.reduced,
        None => acc.full,
    };
    let accepted = streams.uniform(Purpose::Accept, 0) < alpha;

    let mut points = Vec::with_capacity(p + 1);
    points.push(q0.to_vec());
    points.extend(cloud);
    let mut probs = vec![0.0];
    probs.extend_from_slice(&prelim);
    let mut log_weights = vec![f64::NEG_INFINITY];
    log_weights.extend(lw);
    let sel = j + 1;
    let mut rb_weights = vec![0.0; p + 1];
    rb_weights[0] = 1.0 - alpha;
    rb_weights[sel] += alpha;

    let next = if accepted { points[sel].clone() } else { q0.to_vec() };
    let record = CloudRecord {
        q0: q0.to_vec(),
        preliminary: None,
        points,
        log_weights,
        probs,
        selected: sel,
        alpha_bar: Some(alpha),
        alpha_bar_full: Some(acc.full),
        alpha_bar_reduced: Some(acc.reduced),
        alpha_bar_closed_form: acc.closed_form,
        auxiliary: aux,
        rb_weights,
        accepted,
        degenerate: false,
    };
    Ok(Step { next, record })
}
