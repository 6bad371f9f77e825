//! One function per experiment kind. Each writes its artifacts under
//! `run.out`, prints a summary line per run and returns the number of
//! failed verdicts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use eoslab::dynamics::{
    detect_period, linspace, simulate_toy, simulate_with, sweep_bifurcation, LinearRecursion,
    NonlinearRecursion, Period, Recording, Termination,
};
use eoslab::extract::{extract_run, ReparamSpec, TrainingRun};
use eoslab::network::widths;
use eoslab::theory::{
    check_gradient_flow, check_limiting_q, check_progressive_sharpening, fit_order, measure_phase1,
    predicted_limiting_sharpness, predicted_q_star, Status,
};
use eoslab::{
    init_xavier, DataBatch, Family, RFunction, ReparamPoint, TheoremVerdict, Trajectory,
};
use rayon::prelude::*;

use crate::config::{DataKind, ExperimentConfig, Kind, Model2d, Tolerances};
use crate::emit;

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub kind: Kind,
    pub hash: String,
    pub pool: rayon::ThreadPool,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a ExperimentConfig, kind: Kind) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build()
            .context("building the worker pool")?;
        Ok(Ctx {
            cfg,
            kind,
            hash: cfg.hash(kind),
            pool,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.run.out.join(name)
    }
}

pub fn run(ctx: &Ctx) -> Result<usize> {
    match ctx.kind {
        Kind::Simulate2d => simulate2d(ctx),
        Kind::TrainNet => train_net(ctx),
        Kind::SweepBifurcation => bifurcation(ctx),
        Kind::SweepEta => sweep_eta(ctx),
        Kind::Verify => crate::verify::run(ctx),
    }
}

fn failures(verdicts: &[TheoremVerdict]) -> usize {
    verdicts.iter().filter(|v| v.is_failure()).count()
}

fn tally(verdicts: &[TheoremVerdict]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in verdicts {
        *counts.entry(v.status.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return "no verdicts".into();
    }
    counts.iter().map(|(k, n)| format!("{n} {k}")).collect::<Vec<_>>().join(", ")
}

fn termination(t: &Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::QAbove => "q-above",
        Termination::MaxSteps => "max-steps",
    }
}

fn last_sharpness(traj: &Trajectory) -> Option<f64> {
    traj.steps.iter().rev().find_map(|r| r.sharpness)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

/// Ratio function and family of the configured two-dimensional model.
pub fn model_rfn(cfg: &ExperimentConfig) -> (RFunction, Family) {
    let s = &cfg.simulate2d;
    match s.model {
        Model2d::LinearRecursion => (RFunction::from_loss(s.loss), Family::Linear),
        Model2d::NonlinearRecursion => (RFunction::from_activation(s.activation), Family::Nonlinear),
        toy => {
            let toy = toy.toy().expect("toy model");
            (toy.rfn(), toy.family())
        }
    }
}

/// Runs the `[simulate2d]` model at step size `eta`.
pub fn simulate_model(cfg: &ExperimentConfig, eta: f64) -> Result<Trajectory> {
    let s = &cfg.simulate2d;
    let start = ReparamPoint::new(s.p0, s.q0)?;
    let stop = cfg.tolerances.stop();
    let record = Recording {
        sharpness_every: s.sharpness_every,
        lambda_tilde: true,
    };
    let steps = cfg.run.max_steps;
    let traj = match s.model {
        Model2d::LinearRecursion => simulate_with(&LinearRecursion { loss: s.loss }, start, eta, steps, &stop, record)?,
        Model2d::NonlinearRecursion => simulate_with(
            &NonlinearRecursion { activation: s.activation },
            start,
            eta,
            steps,
            &stop,
            record,
        )?,
        toy => {
            let toy = toy.toy().expect("toy model");
            let (x, y) = toy.from_reparam(start, eta)?;
            simulate_toy(toy, x, y, eta, steps, &stop, record)?
        }
    };
    Ok(traj)
}

fn inapplicable(name: &str, why: &str) -> TheoremVerdict {
    TheoremVerdict {
        name: name.to_string(),
        status: Status::Inapplicable,
        measured: BTreeMap::new(),
        predicted: BTreeMap::new(),
        tolerance: 0.0,
        pass: false,
        notes: vec![why.to_string()],
    }
}

/// The checks that apply to a two-dimensional run: the gradient-flow bound
/// when `q₀ ≥ 1`, otherwise both EoS phases and, when sharpness was
/// sampled, progressive sharpening.
pub fn verdicts_2d(traj: &Trajectory, rfn: &RFunction, family: Family, tol: &Tolerances) -> Result<Vec<TheoremVerdict>> {
    let Some(first) = traj.initial() else {
        return Ok(Vec::new());
    };
    if !rfn.is_conforming() {
        return Ok(Vec::new());
    }
    if first.point.q >= 1.0 {
        return Ok(truncated(vec![check_gradient_flow(traj, rfn, family)?], traj));
    }
    let phase1 = measure_phase1(traj, rfn, family, tol.tol_mult, &tol.eos())?;
    let limit = check_limiting_q(traj, rfn, family, &tol.limiting(), &tol.eos())?;
    let sampled = traj.steps.iter().any(|r| r.sharpness.is_some());
    let sharpening = match (phase1.status, phase1.get("t_a")) {
        _ if !sampled => None,
        (Status::Pass | Status::ConditionalPass, Some(t_a)) => Some(check_progressive_sharpening(
            traj,
            rfn,
            family,
            t_a as usize,
            &tol.sharpening(),
        )?),
        _ => Some(inapplicable(
            &format!("progressive-sharpening-{}", family_name(family)),
            "no phase-I entry time",
        )),
    };
    let mut out = vec![phase1, limit];
    out.extend(sharpening);
    Ok(truncated(out, traj))
}

/// A run stopped by `max_steps` cannot refute a statement about its limit,
/// nor a phase-I entry it never reached.
fn truncated(mut verdicts: Vec<TheoremVerdict>, traj: &Trajectory) -> Vec<TheoremVerdict> {
    if traj.termination == Termination::MaxSteps {
        let about_limit = |v: &TheoremVerdict| {
            v.name.starts_with("limiting-q")
                || v.name.starts_with("gradient-flow")
                || (v.name.starts_with("phase1") && v.get("t_a").is_none())
        };
        for v in verdicts.iter_mut().filter(|v| v.is_failure() && about_limit(v)) {
            v.status = Status::Inapplicable;
            v.notes.push(format!("run stopped at max_steps = {} before converging", traj.steps.len() - 1));
        }
    }
    verdicts
}

fn family_name(family: Family) -> &'static str {
    match family {
        Family::Linear => "linear",
        Family::Nonlinear => "nonlinear",
    }
}

fn simulate2d(ctx: &Ctx) -> Result<usize> {
    let cfg = ctx.cfg;
    let eta = cfg.run.eta;
    let traj = simulate_model(cfg, eta)?;
    let (rfn, family) = model_rfn(cfg);
    let path = ctx.path("trajectory.csv");
    emit::emit_trajectory(&traj, cfg.run.csv_stride, &path, &ctx.hash)?;
    let verdicts = verdicts_2d(&traj, &rfn, family, &cfg.tolerances)?;
    emit::emit_report(&verdicts, &ctx.path("report.txt"), &ctx.hash)?;
    let last = traj.last().expect("at least the initial record");
    println!(
        "simulate2d {} eta={eta} steps={} {}: p={:.3e} q={:.8} s={:.8} sharpness={} verdicts: {} -> {}",
        traj.model_tag,
        last.t,
        termination(&traj.termination),
        last.point.p,
        last.point.q,
        last.s,
        fmt_opt(last_sharpness(&traj)),
        tally(&verdicts),
        path.display()
    );
    Ok(failures(&verdicts))
}

struct NetTask {
    depth: usize,
    width: usize,
    gain: f64,
    seed: u64,
}

impl NetTask {
    fn file(&self) -> String {
        format!("trajectory_L{}_m{}_a{}_seed{}.csv", self.depth, self.width, self.gain, self.seed)
    }
}

fn train_net(ctx: &Ctx) -> Result<usize> {
    let cfg = ctx.cfg;
    let n = &cfg.network;
    let eta = cfg.run.eta;
    let mut tasks = Vec::new();
    for &depth in &n.depths {
        for &width in &n.widths {
            for &gain in &n.gains {
                for r in 0..n.replicas as u64 {
                    tasks.push(NetTask {
                        depth,
                        width,
                        gain,
                        seed: cfg.run.seed + r,
                    });
                }
            }
        }
    }
    let batch = match n.data {
        DataKind::UnitPoint => DataBatch::unit_point(n.d, n.y),
        DataKind::Gaussian => DataBatch::gaussian(n.n, n.d, n.data_seed.unwrap_or(cfg.run.seed + 1))?,
    };
    let results: Vec<Result<Trajectory>> = ctx.pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let run = TrainingRun {
                    params0: init_xavier(&widths(n.d, task.width, task.depth), task.gain, task.seed, n.activation)?,
                    batch: batch.clone(),
                    loss: n.loss,
                    eta,
                    steps: n.steps,
                };
                let spec = ReparamSpec {
                    aggregator: n.aggregator,
                    sharpness_every: n.sharpness_every,
                    power: cfg.tolerances.power(task.seed),
                };
                let traj = extract_run(&run, &spec)?.trajectory;
                Ok(traj)
            })
            .collect()
    });

    let rfn = RFunction::from_loss(n.loss);
    // The two-dimensional recursion is exact only for this setting.
    let exact = n.activation == eoslab::Activation::Linear && n.data == DataKind::UnitPoint && n.y == 0.0;
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        let traj = result.with_context(|| {
            format!("network L={} m={} gain={} seed={}", task.depth, task.width, task.gain, task.seed)
        })?;
        let file = task.file();
        emit::emit_trajectory(&traj, cfg.run.csv_stride, &ctx.path(&file), &ctx.hash)?;
        if exact && task.depth == 2 {
            for mut v in verdicts_2d(&traj, &rfn, Family::Linear, &cfg.tolerances)? {
                v.notes.push(format!("run {file}"));
                verdicts.push(v);
            }
        }
        let first = traj.initial().expect("initial record");
        let last = traj.last().expect("final record");
        let mut tail: Vec<f64> = eoslab::alignment_residual(&traj, &rfn);
        tail.drain(..tail.len() * 4 / 5);
        tail.sort_by(f64::total_cmp);
        let median = tail[tail.len() / 2];
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{},{}",
            task.depth,
            task.width,
            emit::num(task.gain),
            task.seed,
            emit::num(first.point.q),
            emit::num(last.point.p),
            emit::num(last.point.q),
            emit::num(last.s),
            emit::num(median),
            last_sharpness(&traj).map(emit::num).unwrap_or_default()
        ));
        println!(
            "train-net L={} m={} gain={} seed={} steps={}: q0={:.6} q={:.6} s={:.6} median|s-1|={:.3e} sharpness={} -> {}",
            task.depth,
            task.width,
            task.gain,
            task.seed,
            last.t,
            first.point.q,
            last.point.q,
            last.s,
            median,
            fmt_opt(last_sharpness(&traj)),
            ctx.path(&file).display()
        );
    }
    emit::emit_table(
        "depth,width,gain,seed,q0,p_final,q_final,s_final,median_abs_s_minus_1_tail,sharpness_final",
        &rows,
        &ctx.path("runs.csv"),
        &ctx.hash,
    )?;
    emit::emit_report(&verdicts, &ctx.path("report.txt"), &ctx.hash)?;
    Ok(failures(&verdicts))
}

fn bifurcation(ctx: &Ctx) -> Result<usize> {
    let b = &ctx.cfg.bifurcation;
    let rfn = b.ratio.rfn();
    let grid = linspace(b.q_min, b.q_max, b.points);
    let (diagram, orbits) = ctx.pool.install(|| -> Result<_> {
        let diagram = sweep_bifurcation(&rfn, &grid, b.burn_in, b.samples, b.p0)?;
        let orbits: Vec<_> = grid
            .par_iter()
            .zip(&diagram.attractor_samples)
            .map(|(&q, tail)| detect_period(tail, b.period_tol, Some((&rfn, q))))
            .collect();
        Ok((diagram, orbits))
    })?;
    let path = ctx.path("diagram.csv");
    emit::emit_diagram(&diagram, &path, &ctx.hash)?;
    emit::emit_orbits(&grid, &orbits, &ctx.path("orbits.csv"), &ctx.hash)?;
    let mut periods: BTreeMap<usize, usize> = BTreeMap::new();
    let mut aperiodic = 0;
    for o in &orbits {
        match o.period {
            Period::Periodic(k) => *periods.entry(k).or_default() += 1,
            Period::Aperiodic => aperiodic += 1,
        }
    }
    let mut census: Vec<String> = periods.iter().map(|(k, n)| format!("period {k}: {n}")).collect();
    census.push(format!("aperiodic: {aperiodic}"));
    println!(
        "sweep-bifurcation {}: {} q in [{}, {}], {} samples each; {} -> {}",
        rfn.name(),
        grid.len(),
        b.q_min,
        b.q_max,
        b.samples,
        census.join(", "),
        path.display()
    );
    Ok(0)
}

/// Order of the `q*` residual against η, `2k` for a family of order `k`.
pub fn order_verdict(family: Family, pairs: &[(f64, f64)]) -> Result<TheoremVerdict> {
    let expected = 2.0 * family.order() as f64;
    let name = format!("limiting-q-order-{}", family_name(family));
    if pairs.len() < 3 {
        return Ok(inapplicable(&name, "fewer than three step sizes"));
    }
    if pairs.iter().any(|&(_, r)| !(r > 0.0)) {
        return Ok(inapplicable(&name, "a residual is zero"));
    }
    let slope = fit_order(pairs)?;
    let pass = (slope - expected).abs() <= 0.5;
    let mut v = inapplicable(&name, "");
    v.notes.clear();
    v.status = if pass { Status::Pass } else { Status::Fail };
    v.pass = pass;
    v.tolerance = 0.5;
    v.measured.insert("slope".into(), slope);
    v.measured.insert("step_sizes".into(), pairs.len() as f64);
    v.predicted.insert("order".into(), expected);
    Ok(v)
}

fn sweep_eta(ctx: &Ctx) -> Result<usize> {
    let cfg = ctx.cfg;
    let sw = &cfg.sweep_eta;
    let etas: Vec<f64> = (0..sw.count).map(|i| cfg.run.eta * sw.factor.powi(i as i32)).collect();
    let (rfn, family) = model_rfn(cfg);
    let results: Vec<Result<Trajectory>> =
        ctx.pool.install(|| etas.par_iter().map(|&eta| simulate_model(cfg, eta)).collect());
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    let mut all_converged = true;
    for (i, (eta, result)) in etas.iter().zip(results).enumerate() {
        let traj = result.with_context(|| format!("eta = {eta}"))?;
        let file = format!("trajectory_{i:02}.csv");
        emit::emit_trajectory(&traj, cfg.run.csv_stride, &ctx.path(&file), &ctx.hash)?;
        for mut v in verdicts_2d(&traj, &rfn, family, &cfg.tolerances)? {
            v.notes.push(format!("eta = {eta}"));
            verdicts.push(v);
        }
        let last = traj.last().expect("final record");
        let q_star = last.point.q;
        all_converged &= traj.converged();
        let predicted = if rfn.is_conforming() {
            predicted_q_star(&rfn, family, *eta)
        } else {
            f64::NAN
        };
        let residual = (q_star - predicted).abs();
        pairs.push((*eta, residual));
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            emit::num(*eta),
            last.t,
            termination(&traj.termination),
            emit::num(q_star),
            emit::num(predicted),
            emit::num(residual),
            last_sharpness(&traj).map(emit::num).unwrap_or_default(),
            emit::num(predicted_limiting_sharpness(&rfn, family, *eta))
        ));
        println!(
            "sweep-eta {} eta={eta} steps={} {}: q*={:.10} residual={:.3e} sharpness={} -> {}",
            traj.model_tag,
            last.t,
            termination(&traj.termination),
            q_star,
            residual,
            fmt_opt(last_sharpness(&traj)),
            ctx.path(&file).display()
        );
    }
    if rfn.is_conforming() && cfg.simulate2d.q0 < 1.0 && all_converged {
        let v = order_verdict(family, &pairs)?;
        if let Some(slope) = v.get("slope") {
            println!("sweep-eta residual order {slope:.3} (expected {})", v.predicted["order"]);
        }
        verdicts.push(v);
    }
    emit::emit_table(
        "eta,steps,termination,q_star,predicted_q_star,residual,sharpness_final,predicted_sharpness",
        &rows,
        &ctx.path("sweep.csv"),
        &ctx.hash,
    )?;
    emit::emit_report(&verdicts, &ctx.path("report.txt"), &ctx.hash)?;
    Ok(failures(&verdicts))
}
