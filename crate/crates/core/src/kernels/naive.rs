use crate::error::Result;
use crate::math::{normalize_log_weights, select_interval};
use crate::rng::{Purpose, StepStreams};

use super::barker::draw_cloud;
use super::{indexed, CloudRecord, Step, TransitionKernel};

/// Reversible Barker selection with weights `π(q_j) Π_{i≠j} f(q_j, q_i)`.
///
/// Quadratic in `p`; used as a reference for the cheaper kernels.
pub(super) fn step_naive_unbiased(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let target = k.target();
    let prop = &k.spec().proposal;
    let mut points = Vec::with_capacity(k.spec().p + 1);
    points.push(q0.to_vec());
    points.extend(draw_cloud(k, q0, streams, Purpose::Proposal)?);
    let n = points.len();
    let log_weights = indexed(n, |j| {
        let mut w = target.log_density(&points[j]);
        for (i, qi) in points.iter().enumerate() {
            if i != j {
                w += prop.log_density(&points[j], qi)?;
            }
        }
        Ok(w)
    })?;
    let probs = normalize_log_weights(&log_weights)?;
    let selected = select_interval(&probs, streams.uniform(Purpose::Select, 0));
    let next = points[selected].clone();
    let mut record = CloudRecord::hold(q0);
    record.rb_weights = probs.clone();
    record.points = points;
    record.log_weights = log_weights;
    record.probs = probs;
    record.selected = selected;
    record.accepted = selected != 0;
    Ok(Step { next, record })
}
