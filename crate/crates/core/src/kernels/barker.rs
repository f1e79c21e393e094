use crate::error::Result;
use crate::math::{normalize_log_weights, select_interval};
use crate::rng::{Purpose, StepStreams};

use super::{indexed, Anchor, CloudRecord, Step, TransitionKernel};

/// Draw `p` proposals around `center` on the proposal streams `1..=p`.
pub(super) fn draw_cloud(k: &TransitionKernel, center: &[f64], streams: &StepStreams, purpose: Purpose) -> Result<Vec<Vec<f64>>> {
    let prop = &k.spec().proposal;
    indexed(k.spec().p, |j| {
        let mut rng = streams.stream(purpose, (j + 1) as u64);
        prop.draw(center, &mut rng)
    })
}

fn select_from(k: &TransitionKernel, q0: &[f64], points: Vec<Vec<f64>>, preliminary: Option<Vec<f64>>, streams: &StepStreams, no_hold: bool) -> Result<Step> {
    let target = k.target();
    let anchor = Anchor::new(target, q0);
    let mut log_weights = indexed(points.len(), |j| k.log_beta(&points[j], &anchor))?;
    if no_hold {
        log_weights[0] = f64::NEG_INFINITY;
    }
    let probs = normalize_log_weights(&log_weights)?;
    let selected = select_interval(&probs, streams.uniform(Purpose::Select, 0));
    let next = points[selected].clone();
    let mut record = CloudRecord::hold(q0);
    record.preliminary = preliminary;
    record.rb_weights = probs.clone();
    record.points = points;
    record.log_weights = log_weights;
    record.probs = probs;
    record.selected = selected;
    record.accepted = selected != 0;
    Ok(Step { next, record })
}

pub(super) fn step_barker(k: &TransitionKernel, q0: &[f64], streams: &StepStreams, no_hold: bool) -> Result<Step> {
    let mut points = Vec::with_capacity(k.spec().p + 1);
    points.push(q0.to_vec());
    points.extend(draw_cloud(k, q0, streams, Purpose::Proposal)?);
    select_from(k, q0, points, None, streams, no_hold)
}

pub(super) fn step_convolutional(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let pre = k.spec().preliminary.as_ref().expect("validated");
    let center = pre.draw(q0, &mut streams.stream(Purpose::Preliminary, 0))?;
    let mut points = Vec::with_capacity(k.spec().p + 1);
    points.push(q0.to_vec());
    points.extend(draw_cloud(k, &center, streams, Purpose::Proposal)?);
    select_from(k, q0, points, Some(center), streams, false)
}
