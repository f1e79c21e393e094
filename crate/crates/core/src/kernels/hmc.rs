//! Path-selection kernels built on a leapfrog trajectory.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{normalize_log_weights, select_interval};
use crate::rng::{Purpose, StepStreams};

use super::{CloudRecord, Family, Step, TransitionKernel};

fn momentum(d: usize, streams: &StepStreams) -> Vec<f64> {
    let mut rng = streams.stream(Purpose::Momentum, 0);
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(super) fn step_hmc_multiproposal(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let sys = k.hmc();
    let p = k.spec().p;
    let v0 = momentum(q0.len(), streams);
    let path = sys.leapfrog_path(q0, &v0, p)?;
    let mut points = Vec::with_capacity(p + 1);
    let mut energies = Vec::with_capacity(p + 1);
    points.push(q0.to_vec());
    energies.push(sys.energy(q0, &v0));
    for (q, v) in path {
        energies.push(sys.energy(&q, &v));
        points.push(q);
    }
    if energies.iter().any(|h| h.is_nan()) {
        return Err(Error::Numerical("NaN energy along the trajectory".into()));
    }
    let log_weights: Vec<f64> = energies.iter().map(|h| -h).collect();
    let mut record = CloudRecord::hold(q0);

    let (selected, accepted, probs) = if k.spec().family == Family::HmcBarker {
        let probs = normalize_log_weights(&log_weights)?;
        let j = select_interval(&probs, streams.uniform(Purpose::Select, 0));
        (j, j != 0, probs)
    } else {
        let a = k.mixture();
        let accept: Vec<f64> = energies[1..].iter().map(|h| (energies[0] - h).min(0.0).exp()).collect();
        let mut probs = vec![0.0];
        probs.extend(a.iter().zip(&accept).map(|(aj, r)| aj * r));
        probs[0] = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        // mixture form: choose a path length, then a single Metropolis test
        let mut choice = vec![(1.0 - a.iter().sum::<f64>()).max(0.0)];
        choice.extend_from_slice(a);
        let j = select_interval(&choice, streams.uniform(Purpose::Mixture, 0));
        let ok = j != 0 && streams.uniform(Purpose::Accept, 0) < accept[j - 1];
        if j != 0 {
            record.alpha_bar = Some(accept[j - 1]);
        }
        (if ok { j } else { 0 }, ok, probs)
    };
    let next = points[selected].clone();
    record.rb_weights = probs.clone();
    record.points = points;
    record.log_weights = log_weights;
    record.probs = probs;
    record.selected = selected;
    record.accepted = accepted;
    Ok(Step { next, record })
}

/// Exact-in-law random integration time `t ~ U(0, T)` using a fine leapfrog
/// discretization as the continuous flow.
pub(super) fn step_hmc_random_time(k: &TransitionKernel, q0: &[f64], streams: &StepStreams) -> Result<Step> {
    let sys = k.hmc();
    let fine = k.spec().fine_steps;
    let v0 = momentum(q0.len(), streams);
    let u = streams.uniform(Purpose::Mixture, 0);
    let t = sys.time * u;
    let n = ((u * fine as f64).ceil() as usize).max(1);
    let (q, _) = sys.integrate_end(q0, &v0, t / n as f64, n)?;
    let mut record = CloudRecord::hold(q0);
    record.points = vec![q0.to_vec(), q.clone()];
    record.log_weights = vec![f64::NEG_INFINITY, 0.0];
    record.probs = vec![0.0, 1.0];
    record.rb_weights = vec![0.0, 1.0];
    record.selected = 1;
    record.accepted = true;
    Ok(Step { next: q, record })
}
