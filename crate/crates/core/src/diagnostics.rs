//! Convergence and accuracy metrics, and grid quadrature for ground truth.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::math::mean;
use crate::targets::BananaParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The series had zero variance.
    pub zero_variance: bool,
    /// The raw estimate exceeded the series length and was capped.
    pub capped: bool,
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
pub fn ess(series: &[f64]) -> Result<Ess> {
    let n = series.len();
    if n < 10 {
        return param("ESS needs at least 10 values");
    }
    let m = mean(series);
    let g0 = autocovariance(series, m, 0);
    if !(g0 > 0.0) {
        return Ok(Ess { value: n as f64, zero_variance: true, capped: false });
    }
    // Γ_k = ρ(2k) + ρ(2k+1), kept while positive and forced non-increasing.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocovariance(series, m, 2 * k) + autocovariance(series, m, 2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    if tau <= 1.0 {
        return Ok(Ess { value: n as f64, zero_variance: false, capped: tau < 1.0 });
    }
    Ok(Ess { value: n as f64 / tau, zero_variance: false, capped: false })
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.total_cmp(y));
    xb.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let s: f64 = (1..=7).map(|j| (-((2 * j - 1) as f64).powi(2) * c).exp()).sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// p-value of a KS statistic with effective size `n_eff` (Stephens' correction).
pub fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d = ks_two_sample(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    (d, ks_pvalue(d, na * nb / (na + nb)))
}

/// Histogram total-variation distance between two 1-D samples on a common
/// binning of their joint range.
pub fn tv_estimate(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    let n = a.len().min(b.len());
    if n == 0 || bins == 0 {
        return param("need non-empty samples and at least one bin");
    }
    if (bins * bins) > n {
        return param("bin count must not exceed the square root of the sample size");
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let i = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
            h[i] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    Ok(0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Mean squared gap between sorted marginals, averaged over coordinates.
///
/// The longer sample is truncated to the shorter one's length.
pub fn order_stat_mse(chain: &[Vec<f64>], exact: &[Vec<f64>]) -> Result<f64> {
    let n = chain.len().min(exact.len());
    if n == 0 {
        return param("order statistics need non-empty samples");
    }
    let d = chain[0].len();
    if exact[0].len() != d || chain[..n].iter().chain(&exact[..n]).any(|q| q.len() != d) {
        return param("samples must share a dimension");
    }
    let mut total = 0.0;
    for k in 0..d {
        let mut a: Vec<f64> = chain[..n].iter().map(|q| q[k]).collect();
        let mut b: Vec<f64> = exact[..n].iter().map(|q| q[k]).collect();
        a.sort_by(|x, y| x.total_cmp(y));
        b.sort_by(|x, y| x.total_cmp(y));
        total += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    Ok(total / d as f64)
}

/// Axis-aligned 2-D box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridLevel {
    pub resolution: [usize; 2],
    pub log_z: f64,
    /// `E|q|^k` for `k = 1..=6`.
    pub moments: [f64; 6],
    /// Largest density on the outer ring of cells relative to the peak.
    pub edge_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOracle {
    pub bbox: GridBox,
    pub levels: Vec<GridLevel>,
    pub converged: bool,
    pub tolerance: f64,
}

pub const GRID_TOLERANCE: f64 = 1e-4;
/// Density on the box boundary must be this small relative to the peak.
pub const GRID_EDGE_RATIO: f64 = 1e-9;
pub const GRID_MAX_LEVELS: usize = 8;

/// Midpoint-rule integrals over one grid.
pub fn grid_level<F>(log_density: &F, bbox: &GridBox, res: [usize; 2]) -> GridLevel
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let hx = (bbox.hi[0] - bbox.lo[0]) / res[0] as f64;
    let hy = (bbox.hi[1] - bbox.lo[1]) / res[1] as f64;
    // rows: [max log-density, edge max, then per-row sums relative to a shift]
    let rows: Vec<(f64, f64, Vec<f64>)> = (0..res[1])
        .into_par_iter()
        .map(|j| {
            let y = bbox.lo[1] + (j as f64 + 0.5) * hy;
            let lds: Vec<f64> = (0..res[0])
                .map(|i| log_density(&[bbox.lo[0] + (i as f64 + 0.5) * hx, y]))
                .collect();
            let row_max = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let edge = if j == 0 || j + 1 == res[1] {
                row_max
            } else {
                lds[0].max(lds[res[0] - 1])
            };
            let mut sums = vec![0.0; 7];
            for (i, l) in lds.iter().enumerate() {
                let x = bbox.lo[0] + (i as f64 + 0.5) * hx;
                let w = (l - row_max).exp();
                let r = (x * x + y * y).sqrt();
                let mut rk = 1.0;
                for s in sums.iter_mut() {
                    *s += w * rk;
                    rk *= r;
                }
            }
            (row_max, edge, sums)
        })
        .collect();
    let peak = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let edge = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mut tot = [0.0; 7];
    for (m, _, s) in &rows {
        let f = (m - peak).exp();
        for k in 0..7 {
            tot[k] += f * s[k];
        }
    }
    let mut moments = [0.0; 6];
    for k in 0..6 {
        moments[k] = tot[k + 1] / tot[0];
    }
    GridLevel {
        resolution: res,
        log_z: peak + (tot[0] * hx * hy).ln(),
        moments,
        edge_ratio: (edge - peak).exp(),
    }
}

fn level_change(a: &GridLevel, b: &GridLevel) -> f64 {
    let mut worst = ((b.log_z.exp() - a.log_z.exp()) / b.log_z.exp()).abs();
    for k in 0..6 {
        worst = worst.max(((b.moments[k] - a.moments[k]) / b.moments[k]).abs());
    }
    worst
}

impl GridOracle {
    /// Refine a midpoint grid by doubling until successive levels agree.
    pub fn build<F>(log_density: F, bbox: GridBox, start: [usize; 2]) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if !(bbox.hi[0] > bbox.lo[0] && bbox.hi[1] > bbox.lo[1]) || start[0] < 2 || start[1] < 2 {
            return param("grid needs a non-empty box and at least 2 cells per axis");
        }
        let mut levels: Vec<GridLevel> = Vec::new();
        for i in 0..GRID_MAX_LEVELS {
            let res = [start[0] << i, start[1] << i];
            let lvl = grid_level(&log_density, &bbox, res);
            if lvl.edge_ratio > GRID_EDGE_RATIO {
                return Err(Error::NotConverged(format!(
                    "density at the box edge is {:.3e} of the peak; mass escapes the box",
                    lvl.edge_ratio
                )));
            }
            let done = levels.last().is_some_and(|prev| level_change(prev, &lvl) < GRID_TOLERANCE);
            levels.push(lvl);
            if done {
                return Ok(Self { bbox, levels, converged: true, tolerance: GRID_TOLERANCE });
            }
        }
        Err(Error::NotConverged(format!("no agreement to {GRID_TOLERANCE} after {GRID_MAX_LEVELS} levels")))
    }

    pub fn finest(&self) -> &GridLevel {
        self.levels.last().expect("built oracle has levels")
    }

    pub fn log_z(&self) -> f64 {
        self.finest().log_z
    }

    pub fn moments(&self) -> [f64; 6] {
        self.finest().moments
    }

    pub fn cache_key(target: &str, bbox: &GridBox) -> String {
        format!(
            "v1_{}_{}_{}_{}_{}_tol{:e}",
            target.replace(|c: char| !c.is_ascii_alphanumeric() && c != '.', "-"),
            bbox.lo[0],
            bbox.hi[0],
            bbox.lo[1],
            bbox.hi[1],
            GRID_TOLERANCE
        )
    }

    /// Load a cached oracle from `dir`, or build and store it.
    pub fn load_or_build<F>(dir: &Path, target: &str, log_density: F, bbox: GridBox, start: [usize; 2]) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let path: PathBuf = dir.join(format!("{}.json", Self::cache_key(target, &bbox)));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(o) = serde_json::from_str::<Self>(&text) {
                return Ok(o);
            }
        }
        let o = Self::build(log_density, bbox, start)?;
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(&path, serde_json::to_string_pretty(&o).expect("serializable"));
        }
        Ok(o)
    }
}

/// Inverse-CDF sampler over the cells of a fixed grid.
///
/// Cells are ordered by the distance of their centre from the origin, so a
/// quantile of the cell CDF is roughly a quantile of `|q|`.
pub struct GridSampler {
    bbox: GridBox,
    res: [usize; 2],
    cells: Vec<usize>,
    cdf: Vec<f64>,
}

impl GridSampler {
    pub fn new<F>(log_density: F, bbox: GridBox, res: [usize; 2]) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let hx = (bbox.hi[0] - bbox.lo[0]) / res[0] as f64;
        let hy = (bbox.hi[1] - bbox.lo[1]) / res[1] as f64;
        let centre = |c: usize| {
            let (i, j) = (c % res[0], c / res[0]);
            [bbox.lo[0] + (i as f64 + 0.5) * hx, bbox.lo[1] + (j as f64 + 0.5) * hy]
        };
        let mut cells: Vec<(f64, usize)> = (0..res[0] * res[1])
            .map(|c| {
                let q = centre(c);
                (q[0] * q[0] + q[1] * q[1], c)
            })
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cells: Vec<usize> = cells.into_iter().map(|(_, c)| c).collect();
        let lds: Vec<f64> = cells.par_iter().map(|&c| log_density(&centre(c))).collect();
        let peak = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = lds
            .iter()
            .map(|l| {
                acc += (l - peak).exp();
                acc
            })
            .collect();
        cdf.iter_mut().for_each(|c| *c /= acc);
        Self { bbox, res, cells, cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        self.at_quantile(u, rng)
    }

    /// `n` draws with one uniform per quantile stratum `[i/n, (i+1)/n)`.
    pub fn sample_stratified<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let u = (i as f64 + rng.random::<f64>()) / n as f64;
                self.at_quantile(u, rng)
            })
            .collect()
    }

    fn at_quantile<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> Vec<f64> {
        let k = self.cdf.partition_point(|&x| x <= u).min(self.cdf.len() - 1);
        let c = self.cells[k];
        let (i, j) = (c % self.res[0], c / self.res[0]);
        let hx = (self.bbox.hi[0] - self.bbox.lo[0]) / self.res[0] as f64;
        let hy = (self.bbox.hi[1] - self.bbox.lo[1]) / self.res[1] as f64;
        vec![
            self.bbox.lo[0] + (i as f64 + rng.random::<f64>()) * hx,
            self.bbox.lo[1] + (j as f64 + rng.random::<f64>()) * hy,
        ]
    }
}

/// Summed relative error of the first six moments of `|q|`.
pub fn banana_loss(samples: &[Vec<f64>], oracle: &GridOracle) -> Result<f64> {
    if samples.len() < 100 {
        return param("moment loss needs at least 100 samples");
    }
    let w = vec![1.0 / samples.len() as f64; samples.len()];
    banana_loss_weighted(samples, &w, oracle)
}

/// Moment loss of a discrete law, e.g. the selection probabilities of one
/// multiproposal step over its cloud.
pub fn banana_loss_weighted(points: &[Vec<f64>], weights: &[f64], oracle: &GridOracle) -> Result<f64> {
    if points.is_empty() || points.len() != weights.len() {
        return param("points and weights must be non-empty and aligned");
    }
    let total: f64 = weights.iter().sum();
    let mut emp = radial_moments(points, weights);
    emp.iter_mut().for_each(|m| *m /= total);
    moment_loss(&emp, oracle)
}

/// `Σ_i w_i |q_i|^k` for `k = 1..=6` (unnormalized).
pub fn radial_moments(points: &[Vec<f64>], weights: &[f64]) -> [f64; 6] {
    let mut emp = [0.0; 6];
    for (q, w) in points.iter().zip(weights) {
        let r = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut rk = 1.0;
        for e in emp.iter_mut() {
            rk *= r;
            *e += w * rk;
        }
    }
    emp
}

/// Summed relative error of given moments `E|q|^k`, `k = 1..=6`.
pub fn moment_loss(emp: &[f64; 6], oracle: &GridOracle) -> Result<f64> {
    if !oracle.converged {
        return Err(Error::NotConverged("oracle is not converged".into()));
    }
    let truth = oracle.moments();
    Ok(emp.iter().zip(&truth).map(|(e, m)| (e - m).abs() / m).sum())
}

/// Box covering the tilted banana's mass at the standard parameters.
pub const TILTED_BANANA_BOX: GridBox = GridBox { lo: [-75.0, -560.0], hi: [65.0, 17.0] };
pub const MILD_BANANA_BOX: GridBox = GridBox { lo: [-10.0, -60.0], hi: [10.0, 9.0] };

/// Box and starting resolution (cells of about one unit) for the known banana shapes.
pub fn banana_grid(params: &BananaParams) -> Option<(GridBox, [usize; 2])> {
    if *params == BananaParams::TILTED {
        Some((TILTED_BANANA_BOX, [140, 577]))
    } else if *params == BananaParams::MILD {
        Some((MILD_BANANA_BOX, [40, 138]))
    } else {
        None
    }
}

/// Converged oracle for a known banana shape, cached under `cache_dir`.
pub fn banana_oracle(params: &BananaParams, cache_dir: &Path) -> Result<GridOracle> {
    let (bbox, start) = banana_grid(params)
        .ok_or_else(|| Error::Unsupported("no grid box is known for these banana parameters".into()))?;
    let t = crate::targets::banana_target(*params)?;
    let key = format!("banana_a{}_b{}_c{}_B{}", params.a, params.b, params.c, params.bend);
    GridOracle::load_or_build(cache_dir, &key, |q: &[f64]| t.log_density(q), bbox, start)
}
