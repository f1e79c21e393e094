//! The four subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use madprops::adaptation::{tune_scale, AdaptPolicy, TuneTrace};
use madprops::chain::{estimate_rb, estimate_standard, fmt_float, run_chain, ChainOptions, ChainTrace};
use madprops::config::KernelConfig;
use madprops::diagnostics::{banana_loss, banana_oracle, ess, ks_two_sample, moment_loss, radial_moments, tv_estimate, GridOracle};
use madprops::kernels::{BetaChoice, Family, TransitionKernel};
use madprops::limits::LimitKernel;
use madprops::math::{mean, ols_slope, variance};
use madprops::rng::{ChainStreams, Purpose, StepStreams};
use madprops::targets::TargetConfig;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{sweep_grid, Command, Experiment, Metric, Reference, SweepMode};
use crate::truth::known_moment;

/// Offsets separating the random streams of auxiliary phases from the main chains.
const ADAPT_SALT: u64 = 0xADA9_7000_0000_0001;
const FROZEN_SALT: u64 = 0xF207_E000_0000_0002;
const REFERENCE_SALT: u64 = 0x4EF0_0000_0000_0003;

pub fn execute(cmd: Command, exp: &Experiment, out: &Path) -> Result<Value> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let t0 = Instant::now();
    let mut summary = match cmd {
        Command::Run => run(exp, out)?,
        Command::Sweep => sweep(exp, out)?,
        Command::Tune => tune(exp, out)?,
        Command::Limitcheck => limitcheck(exp, out)?,
    };
    let wall = t0.elapsed().as_secs_f64();
    let obj = summary.as_object_mut().expect("summary is an object");
    for key in ["mean", "se", "ess_mean", "ess_min", "acceptance_rate"] {
        obj.entry(key).or_insert(Value::Null);
    }
    let ess_per_sec = obj.get("ess_mean").and_then(Value::as_f64).map(|e| e / wall);
    obj.insert("ess_per_sec".into(), json!(ess_per_sec));
    obj.insert("wall_seconds".into(), json!(wall));
    obj.insert("command".into(), json!(command_name(cmd)));
    obj.insert("name".into(), json!(exp.cfg.name));
    obj.insert("seed".into(), json!(exp.cfg.seed));
    let mut w = create(out, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(summary)
}

fn command_name(cmd: Command) -> &'static str {
    match cmd {
        Command::Run => "run",
        Command::Sweep => "sweep",
        Command::Tune => "tune",
        Command::Limitcheck => "limitcheck",
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path: PathBuf = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn oracle_cache() -> PathBuf {
    std::env::var_os("MADPROPS_CACHE").map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("madprops-oracle"))
}

fn oracle_for(exp: &Experiment) -> Result<Option<GridOracle>> {
    match &exp.cfg.target.target {
        TargetConfig::Banana { a, b, c, bend } => {
            let params = madprops::targets::BananaParams { a: *a, b: *b, c: *c, bend: *bend };
            if madprops::diagnostics::banana_grid(&params).is_none() {
                return Ok(None);
            }
            Ok(Some(banana_oracle(&params, &oracle_cache())?))
        }
        _ => Ok(None),
    }
}

/// One chain, with optional burn-in adaptation. Returns the trace and the
/// frozen scale when adaptation ran.
fn one_chain(exp: &Experiment, kcfg: &KernelConfig, c: u64) -> Result<(ChainTrace, Option<f64>)> {
    let cfg = &exp.cfg;
    let opts = ChainOptions::default();
    let target = &exp.target;
    match &cfg.adapt {
        Some(policy) if cfg.burn_in > 0 => {
            let sigma0 = kcfg.proposal.scale().expect("validated");
            let build = |s: f64| Ok(kcfg.with_scale(s)?.build(target)?);
            let tr = tune_scale(build, sigma0, &exp.start, cfg.burn_in, policy, ChainStreams::new(cfg.seed ^ ADAPT_SALT, c))?;
            let kernel = kcfg.with_scale(tr.final_sigma)?.build(target)?;
            let trace = run_chain(&kernel, &tr.final_state, cfg.n - cfg.burn_in, 0, &exp.observables, ChainStreams::new(cfg.seed, c), opts)?;
            Ok((trace, Some(tr.final_sigma)))
        }
        _ => {
            let kernel = kcfg.build(target)?;
            let trace = run_chain(&kernel, &exp.start, cfg.n, cfg.burn_in, &exp.observables, ChainStreams::new(cfg.seed, c), opts)?;
            Ok((trace, None))
        }
    }
}

struct ChainStats {
    means: Vec<f64>,
    rb_means: Vec<f64>,
    ess: Vec<f64>,
    acceptance: f64,
}

fn chain_stats(exp: &Experiment, trace: &ChainTrace) -> Result<ChainStats> {
    let mut s = ChainStats { means: Vec::new(), rb_means: Vec::new(), ess: Vec::new(), acceptance: trace.acceptance_rate() };
    for obs in &exp.observables {
        s.means.push(estimate_standard(trace, obs)?);
        s.rb_means.push(estimate_rb(trace, obs)?);
        s.ess.push(ess(&trace.series(obs))?.value);
    }
    Ok(s)
}

fn pooled_loss(oracle: &Option<GridOracle>, traces: &[&ChainTrace]) -> Result<Option<f64>> {
    let Some(o) = oracle else { return Ok(None) };
    let pooled: Vec<Vec<f64>> = traces.iter().flat_map(|t| t.post_burn_in().iter().cloned()).collect();
    if pooled.len() < 100 {
        return Ok(None);
    }
    Ok(Some(banana_loss(&pooled, o)?))
}

fn run(exp: &Experiment, out: &Path) -> Result<Value> {
    let cfg = &exp.cfg;
    let results: Vec<(ChainTrace, Option<f64>)> =
        (0..cfg.chains as u64).into_par_iter().map(|c| one_chain(exp, &cfg.kernel, c)).collect::<Result<_>>()?;
    for (c, (trace, _)) in results.iter().enumerate() {
        let mut w = create(out, &format!("chain_{c:03}.csv"))?;
        trace.write_csv(&mut w)?;
        w.flush()?;
        if cfg.write_rb {
            let mut w = create(out, &format!("rb_{c:03}.csv"))?;
            trace.write_rb_csv(&mut w)?;
            w.flush()?;
        }
    }
    let stats: Vec<ChainStats> = results.iter().map(|(t, _)| chain_stats(exp, t)).collect::<Result<_>>()?;
    let chains = stats.len() as f64;
    let (mut m, mut se, mut rb, mut es, mut truth, mut mse) = (Map::new(), Map::new(), Map::new(), Map::new(), Map::new(), Map::new());
    let mut all_ess = Vec::new();
    for (o, obs) in exp.observables.iter().enumerate() {
        let means: Vec<f64> = stats.iter().map(|s| s.means[o]).collect();
        let ess_o: Vec<f64> = stats.iter().map(|s| s.ess[o]).collect();
        let pooled = mean(&means);
        let err = if stats.len() >= 2 {
            (variance(&means) / chains).sqrt()
        } else {
            let series = results[0].0.series(obs);
            (variance(&series) / ess_o[0]).sqrt()
        };
        m.insert(obs.name.clone(), json!(pooled));
        se.insert(obs.name.clone(), json!(err));
        rb.insert(obs.name.clone(), json!(mean(&stats.iter().map(|s| s.rb_means[o]).collect::<Vec<_>>())));
        es.insert(obs.name.clone(), json!(ess_o));
        all_ess.extend_from_slice(&ess_o);
        if let Some(v) = known_moment(&cfg.target.target, &obs.name) {
            truth.insert(obs.name.clone(), json!(v));
            mse.insert(obs.name.clone(), json!(means.iter().map(|x| (x - v) * (x - v)).sum::<f64>() / chains));
        }
    }
    let oracle = oracle_for(exp)?;
    let loss = pooled_loss(&oracle, &results.iter().map(|(t, _)| t).collect::<Vec<_>>())?;
    let sigmas: Vec<Option<f64>> = results.iter().map(|(_, s)| *s).collect();
    Ok(json!({
        "chains": cfg.chains,
        "n": cfg.n,
        "burn_in": cfg.burn_in,
        "mean": m,
        "se": se,
        "rb_mean": rb,
        "ess": es,
        "ess_mean": mean(&all_ess),
        "ess_min": all_ess.iter().copied().fold(f64::INFINITY, f64::min),
        "acceptance_rate": mean(&stats.iter().map(|s| s.acceptance).collect::<Vec<_>>()),
        "truth": truth,
        "mse": mse,
        "loss": loss,
        "final_sigma": if cfg.adapt.is_some() { json!(sigmas) } else { Value::Null },
    }))
}

struct Row {
    p: usize,
    sigma: Option<f64>,
    replicate: usize,
    metric: String,
    value: f64,
}

fn write_rows(out: &Path, rows: &[Row]) -> Result<()> {
    let mut w = create(out, "sweep.csv")?;
    writeln!(w, "p,sigma,replicate,metric,value")?;
    for r in rows {
        let s = r.sigma.map(fmt_float).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.p, s, r.replicate, r.metric, fmt_float(r.value))?;
    }
    w.flush()?;
    Ok(())
}

fn sweep(exp: &Experiment, out: &Path) -> Result<Value> {
    let cfg = &exp.cfg;
    let s = cfg.sweep.as_ref().expect("validated");
    let grid = sweep_grid(&cfg.kernel, s)?;
    let oracle = oracle_for(exp)?;
    let q0 = s.q0.clone().unwrap_or_else(|| vec![0.0; exp.target.dim]);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..s.replicates).map(move |r| (g, r))).collect();
    let per_job: Vec<Vec<Row>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let (p, sigma, kcfg) = &grid[g];
            let row = |metric: String, value: f64| Row { p: *p, sigma: *sigma, replicate: r, metric, value };
            let mut rows = Vec::new();
            match s.mode {
                SweepMode::Chain => {
                    let (trace, final_sigma) = one_chain(exp, kcfg, r as u64)?;
                    let st = chain_stats(exp, &trace)?;
                    rows.push(row("acceptance_rate".into(), st.acceptance));
                    for (o, obs) in exp.observables.iter().enumerate() {
                        rows.push(row(format!("mean_{}", obs.name), st.means[o]));
                        rows.push(row(format!("rb_mean_{}", obs.name), st.rb_means[o]));
                        rows.push(row(format!("ess_{}", obs.name), st.ess[o]));
                        if let Some(v) = known_moment(&cfg.target.target, &obs.name) {
                            rows.push(row(format!("sq_error_{}", obs.name), (st.means[o] - v).powi(2)));
                        }
                    }
                    if let Some(l) = pooled_loss(&oracle, &[&trace])? {
                        rows.push(row("loss".into(), l));
                    }
                    if let Some(fs) = final_sigma {
                        rows.push(row("final_sigma".into(), fs));
                    }
                }
                SweepMode::Onestep => {
                    let kernel = kcfg.build(&exp.target)?;
                    let os = onestep(exp, &kernel, &q0, s.redraws.max(1), replicate_seed(cfg.seed, r))?;
                    rows.push(row("move_probability".into(), os.move_probability));
                    for (obs, v) in exp.observables.iter().zip(&os.rb) {
                        rows.push(row(format!("rb_{}", obs.name), *v));
                    }
                    if let Some(o) = &oracle {
                        rows.push(row("loss".into(), moment_loss(&os.weighted_moments, o)?));
                        if os.draws >= 100 {
                            rows.push(row("loss_draws".into(), moment_loss(&os.draw_moments, o)?));
                        }
                    }
                    if let Some((m, v)) = os.alpha_bar {
                        rows.push(row("alpha_bar_mean".into(), m));
                        rows.push(row("alpha_bar_var".into(), v));
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Row> = per_job.into_iter().flatten().collect();
    write_rows(out, &rows)?;
    Ok(json!({ "points": grid.len(), "replicates": s.replicates, "rows": rows.len() }))
}

fn is_slingshot(k: &TransitionKernel) -> bool {
    k.spec().family == Family::Barker && k.spec().beta == Some(BetaChoice::Slingshot)
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Aggregates over independent single transitions from one state.
struct OneStep {
    draws: usize,
    move_probability: f64,
    /// Cloud-weighted means of each observable.
    rb: Vec<f64>,
    /// `E|q|^k` under the one-step law, estimated with cloud weights.
    weighted_moments: [f64; 6],
    /// `E|q|^k` over the realized next states.
    draw_moments: [f64; 6],
    /// Mean and variance over clouds of `(1/p) Σ π(q_l)/f(q0,q_l)`.
    alpha_bar: Option<(f64, f64)>,
}

fn onestep(exp: &Experiment, kernel: &TransitionKernel, q0: &[f64], draws: usize, seed: u64) -> Result<OneStep> {
    let log_z = exp.target.log_norm_const.unwrap_or(0.0);
    let sling = is_slingshot(kernel);
    let per: Vec<(f64, Vec<f64>, [f64; 6], [f64; 6], f64)> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let step = kernel.step(q0, &StepStreams::standalone(seed, i as u64))?;
            let rec = &step.record;
            let rb = exp.observables.iter().map(|o| rec.rb_value(|x| o.eval(x))).collect();
            let wm = radial_moments(&rec.points, &rec.rb_weights);
            let dm = radial_moments(std::slice::from_ref(&step.next), &[1.0]);
            let ab = if sling {
                let lw = &rec.log_weights[1..];
                lw.iter().map(|l| (l - log_z).exp()).sum::<f64>() / lw.len() as f64
            } else {
                f64::NAN
            };
            Ok((1.0 - rec.rb_weights[0], rb, wm, dm, ab))
        })
        .collect::<Result<_>>()?;
    let n = draws as f64;
    let mut os = OneStep {
        draws,
        move_probability: per.iter().map(|x| x.0).sum::<f64>() / n,
        rb: vec![0.0; exp.observables.len()],
        weighted_moments: [0.0; 6],
        draw_moments: [0.0; 6],
        alpha_bar: None,
    };
    for (_, rb, wm, dm, _) in &per {
        for (a, b) in os.rb.iter_mut().zip(rb) {
            *a += b / n;
        }
        for k in 0..6 {
            os.weighted_moments[k] += wm[k] / n;
            os.draw_moments[k] += dm[k] / n;
        }
    }
    if sling && draws >= 2 {
        let ab: Vec<f64> = per.iter().map(|x| x.4).collect();
        os.alpha_bar = Some((mean(&ab), variance(&ab)));
    }
    Ok(os)
}

fn tune(exp: &Experiment, out: &Path) -> Result<Value> {
    let cfg = &exp.cfg;
    let t = cfg.tune.as_ref().expect("validated");
    let ps = t.p.clone().unwrap_or_else(|| vec![cfg.kernel.p]);
    let sigma0 = t.sigma0.or(cfg.kernel.proposal.scale()).expect("validated");
    let base = cfg.adapt.unwrap_or(AdaptPolicy::new(0.5)?);
    let combos: Vec<(usize, f64)> = ps.iter().flat_map(|&p| t.target_rates.iter().map(move |&r| (p, r))).collect();
    let results: Vec<(TuneTrace, f64)> = combos
        .par_iter()
        .enumerate()
        .map(|(i, &(p, rate))| {
            let policy = AdaptPolicy { target_rate: rate, ..base };
            let kp = cfg.kernel.with_p(p);
            let build = |s: f64| Ok(kp.with_scale(s)?.build(&exp.target)?);
            let tr = tune_scale(build, sigma0, &exp.start, cfg.burn_in, &policy, ChainStreams::new(cfg.seed, i as u64))?;
            let kernel = kp.with_scale(tr.final_sigma)?.build(&exp.target)?;
            let frozen = run_chain(&kernel, &tr.final_state, cfg.n - cfg.burn_in, 0, &[], ChainStreams::new(cfg.seed ^ FROZEN_SALT, i as u64), ChainOptions::default())?;
            Ok((tr, frozen.acceptance_rate()))
        })
        .collect::<Result<_>>()?;
    let mut w = create(out, "tune_trace.csv")?;
    writeln!(w, "p,target_rate,epoch,sigma,rate")?;
    for ((p, rate), (tr, _)) in combos.iter().zip(&results) {
        for (e, (s, r)) in tr.sigmas.iter().zip(&tr.rates).enumerate() {
            writeln!(w, "{p},{},{e},{},{}", fmt_float(*rate), fmt_float(*s), fmt_float(*r))?;
        }
    }
    w.flush()?;
    let mut w = create(out, "tune_final.csv")?;
    writeln!(w, "p,target_rate,final_sigma,measured_rate")?;
    for ((p, rate), (tr, measured)) in combos.iter().zip(&results) {
        writeln!(w, "{p},{},{},{}", fmt_float(*rate), fmt_float(tr.final_sigma), fmt_float(*measured))?;
    }
    w.flush()?;
    let rates: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(json!({ "acceptance_rate": mean(&rates), "final_sigma": results.iter().map(|r| r.0.final_sigma).collect::<Vec<_>>() }))
}

fn limitcheck(exp: &Experiment, out: &Path) -> Result<Value> {
    let cfg = &exp.cfg;
    let l = cfg.limitcheck.as_ref().expect("validated");
    let k = l.coordinate;
    let ref_seed = cfg.seed ^ REFERENCE_SALT;
    let reference: Vec<f64> = match l.reference {
        Reference::Exact => (0..l.n)
            .into_par_iter()
            .map(|i| Ok(exp.target.sample_exact(&mut StepStreams::standalone(ref_seed, i as u64).stream(Purpose::Exact, 0))?[k]))
            .collect::<Result<_>>()?,
        Reference::BubbleBath | Reference::Tjelmeland => {
            let kernel = cfg.kernel.build(&exp.target)?;
            let weight = cfg.kernel.beta.unwrap_or(BetaChoice::BubbleBath);
            let proposal = kernel.spec().proposal.clone();
            let mut lk = if l.reference == Reference::BubbleBath {
                LimitKernel::bubble_bath(exp.target.clone(), proposal, weight)?
            } else {
                LimitKernel::tjelmeland(exp.target.clone(), proposal, weight)?
            };
            if let Some(b) = l.log_sup {
                lk = lk.with_log_sup(b);
            }
            lk.draw_many(&l.q0, l.n, ref_seed)?.into_iter().map(|q| q[k]).collect()
        }
    };
    let bins = l.bins.unwrap_or((l.n as f64).sqrt() as usize);
    let mut dist = Vec::new();
    for &p in &l.p {
        let kernel = cfg.kernel.with_p(p).build(&exp.target)?;
        let draws: Vec<f64> = (0..l.n)
            .into_par_iter()
            .map(|i| Ok(kernel.step(&l.q0, &StepStreams::standalone(cfg.seed, i as u64))?.next[k]))
            .collect::<Result<_>>()?;
        dist.push(match l.metric {
            Metric::Tv => tv_estimate(&draws, &reference, bins)?,
            Metric::Ks => ks_two_sample(&draws, &reference),
        });
    }
    let mut w = create(out, "limitcheck.csv")?;
    writeln!(w, "p,distance")?;
    for (p, d) in l.p.iter().zip(&dist) {
        writeln!(w, "{p},{}", fmt_float(*d))?;
    }
    w.flush()?;
    if dist.iter().any(|&d| d <= 0.0) {
        anyhow::bail!("a distance of zero has no logarithm; the slope is undefined");
    }
    let x: Vec<f64> = l.p.iter().map(|&p| (p as f64).ln()).collect();
    let y: Vec<f64> = dist.iter().map(|d| d.ln()).collect();
    let slope = ols_slope(&x, &y)?;
    Ok(json!({ "slope": slope, "distances": dist, "bins": bins }))
}
