//! Metropolis-type multiproposal acceptance, evaluated literally.
//!
//! Accepting `q_j` with probability `a_j · min(1, β(q_j,q0)/β(q0,q_j))` and
//! holding otherwise is a mixture of single-proposal Metropolis kernels;
//! this implementation exists so that equivalence can be checked.

use crate::error::{Error, Result};
use crate::math::select_interval;
use crate::rng::{Purpose, StepStreams};

use super::barker::draw_cloud;
use super::{indexed, Anchor, CloudRecord, Step, TransitionKernel};

pub(super) fn step_metropolis_degenerate(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let target = k.target();
    let a = k.mixture();
    let cloud = draw_cloud(k, q0, streams, Purpose::Proposal)?;
    let at_q0 = Anchor::new(target, q0);
    let ratios = indexed(cloud.len(), |j| {
        let at_j = Anchor::new(target, &cloud[j]);
        let r = k.log_beta(&cloud[j], &at_q0)? - k.log_beta(q0, &at_j)?;
        if r.is_nan() {
            return Err(Error::Numerical("NaN acceptance ratio".into()));
        }
        Ok(r)
    })?;
    let mut probs = Vec::with_capacity(cloud.len() + 1);
    probs.push(0.0);
    for (aj, r) in a.iter().zip(&ratios) {
        probs.push(aj * r.min(0.0).exp());
    }
    let moved: f64 = probs.iter().sum();
    probs[0] = (1.0 - moved).max(0.0);
    let selected = select_interval(&probs, streams.uniform(Purpose::Select, 0));
    let mut points = Vec::with_capacity(cloud.len() + 1);
    points.push(q0.to_vec());
    points.extend(cloud);
    let next = points[selected].clone();
    let mut record = CloudRecord::hold(q0);
    record.log_weights = std::iter::once(f64::NEG_INFINITY).chain(ratios).collect();
    record.rb_weights = probs.clone();
    record.points = points;
    record.probs = probs;
    record.selected = selected;
    record.accepted = selected != 0;
    Ok(Step { next, record })
}
