//! Verification suites over the theorem checks.

use std::collections::BTreeMap;

use anyhow::Result;
use eoslab::dynamics::{
    detect_period, linspace, simulate, simulate_toy, sweep_bifurcation, LinearRecursion,
    NonlinearRecursion, Period, Recording, ToyModel, DEFAULT_BURN_IN, DEFAULT_P0, DEFAULT_SAMPLES,
};
use eoslab::network::{bilinear_hessian, symmetric_eigenvalues};
use eoslab::theory::{
    check_gradient_flow, check_sharpness_sandwich_linear,
    check_sharpness_sandwich_nonlinear, predicted_q_star, Status,
};
use eoslab::{Activation, Family, RFunction, ReparamPoint, ScalarLoss, TheoremVerdict};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{ExperimentConfig, Suite};
use crate::emit;
use crate::experiments::{order_verdict, verdicts_2d, Ctx};

const LOSS: ScalarLoss = ScalarLoss::LogCosh;
const ACTIVATION: Activation = Activation::Tanh;

fn aggregate(name: &str, draws: usize, worst: f64, bound: f64, failed: usize, measured: &str) -> TheoremVerdict {
    let pass = failed == 0;
    TheoremVerdict {
        name: name.to_string(),
        status: if pass { Status::Pass } else { Status::Fail },
        measured: BTreeMap::from([
            ("draws".to_string(), draws as f64),
            ("failed".to_string(), failed as f64),
            (measured.to_string(), worst),
        ]),
        predicted: BTreeMap::from([("bound".to_string(), bound)]),
        tolerance: bound,
        pass,
        notes: Vec::new(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Shared shape of both family suites: the gradient-flow run, an η sweep of
/// EoS runs with their residual order, and progressive sharpening on the toy.
struct FamilySetup {
    family: Family,
    rfn: RFunction,
    toy: ToyModel,
    gradient_flow_eta: f64,
    sweep: [f64; 3],
}

fn family_suite(cfg: &ExperimentConfig, setup: &FamilySetup) -> Result<Vec<TheoremVerdict>> {
    let tol = &cfg.tolerances;
    let stop = tol.stop();
    let steps = cfg.run.max_steps;
    let run = |start: ReparamPoint, eta: f64| -> Result<eoslab::Trajectory> {
        let traj = match setup.family {
            Family::Linear => simulate(&LinearRecursion { loss: LOSS }, start, eta, steps, &stop)?,
            Family::Nonlinear => simulate(&NonlinearRecursion { activation: ACTIVATION }, start, eta, steps, &stop)?,
        };
        Ok(traj)
    };
    let mut out = Vec::new();
    let gf = run(ReparamPoint { p: 1.0, q: 2.0 }, setup.gradient_flow_eta)?;
    out.push(check_gradient_flow(&gf, &setup.rfn, setup.family)?);

    let eos_start = ReparamPoint { p: 1.0, q: 0.9 };
    let mut pairs = Vec::new();
    for eta in setup.sweep {
        let traj = run(eos_start, eta)?;
        for mut v in verdicts_2d(&traj, &setup.rfn, setup.family, tol)? {
            v.notes.push(format!("eta = {eta}"));
            out.push(v);
        }
        let q = traj.last().map(|r| r.point.q).unwrap_or(f64::NAN);
        pairs.push((eta, (q - predicted_q_star(&setup.rfn, setup.family, eta)).abs()));
    }
    out.push(order_verdict(setup.family, &pairs)?);

    let eta = cfg.run.eta;
    let (x, y) = setup.toy.from_reparam(eos_start, eta)?;
    let record = Recording {
        sharpness_every: 1,
        lambda_tilde: true,
    };
    let toy = simulate_toy(setup.toy, x, y, eta, steps, &stop, record)?;
    for mut v in verdicts_2d(&toy, &setup.rfn, setup.family, tol)? {
        // only the sharpening verdict is new; the limit was checked above
        if v.name.starts_with("progressive-sharpening") {
            v.notes.push(format!("toy {} at eta = {eta}", setup.toy.name()));
            out.push(v);
        }
    }
    Ok(out)
}

fn linear_sandwich(rng: &mut ChaCha8Rng, draws: usize) -> Result<TheoremVerdict> {
    let (m, d) = (8, 5);
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for _ in 0..draws {
        let u = DMatrix::from_fn(m, d, |_, _| 0.5 * normal(rng));
        let v = DVector::from_fn(m, |_, _| 0.5 * normal(rng));
        let x = DVector::from_fn(d, |_, _| normal(rng)).normalize();
        let verdict = check_sharpness_sandwich_linear(&u, &v, &x, LOSS)?;
        worst = worst.max(verdict.get("gap").unwrap_or(f64::INFINITY));
        failed += usize::from(verdict.status != Status::Pass);
    }
    Ok(aggregate("sharpness-sandwich-linear", draws, worst, 1.0, failed, "max_gap"))
}

fn nonlinear_sandwich(rng: &mut ChaCha8Rng, draws: usize) -> Result<TheoremVerdict> {
    let mut checked = 0;
    let mut skipped = 0;
    let mut failed = 0;
    while checked < draws {
        let x = rng.random_range(-3.0..3.0);
        let y = rng.random_range(-10.0..10.0);
        let v = check_sharpness_sandwich_nonlinear(x, y, ACTIVATION)?;
        match v.status {
            Status::Inapplicable => skipped += 1,
            Status::Pass => checked += 1,
            _ => {
                checked += 1;
                failed += 1;
            }
        }
    }
    let mut v = aggregate("sharpness-sandwich-nonlinear", draws, failed as f64, 0.0, failed, "violations");
    v.measured.insert("skipped".into(), skipped as f64);
    Ok(v)
}

fn eigen_pairing(rng: &mut ChaCha8Rng, draws: usize) -> Result<TheoremVerdict> {
    let mut worst_pair: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..draws {
        let x = DVector::from_fn(3, |_, _| normal(rng)).normalize();
        let ev = symmetric_eigenvalues(bilinear_hessian(4, &x)?);
        let n = ev.len();
        for i in 0..n {
            worst_pair = worst_pair.max((ev[i] + ev[n - 1 - i]).abs());
        }
        worst_norm = worst_norm.max(ev[n - 1].max(-ev[0]));
    }
    let failed = usize::from(worst_pair > 1e-12) + usize::from(worst_norm > 1.0 + 1e-12);
    let mut v = aggregate("bilinear-eigen-pairing", draws, worst_pair, 1e-12, failed, "max_pair_error");
    v.measured.insert("max_spectral_norm".into(), worst_norm);
    v.predicted.insert("spectral_norm_bound".into(), 1.0);
    Ok(v)
}

fn map_suite(ctx: &Ctx) -> Result<Vec<TheoremVerdict>> {
    let grid = linspace(0.3, 1.5, 481);
    let lc = RFunction::from_loss(LOSS);
    let elu = RFunction::from_activation(Activation::Elu);
    let (lcd, elud) = ctx.pool.install(|| -> Result<_> {
        Ok((
            sweep_bifurcation(&lc, &grid, DEFAULT_BURN_IN, DEFAULT_SAMPLES, DEFAULT_P0)?,
            sweep_bifurcation(&elu, &grid, DEFAULT_BURN_IN, DEFAULT_SAMPLES, DEFAULT_P0)?,
        ))
    })?;
    let mut worst_fixed: f64 = 0.0;
    let mut worst_orbit: f64 = 0.0;
    for (&q, samples) in grid.iter().zip(&lcd.attractor_samples) {
        if q > 1.0 {
            worst_fixed = samples.iter().fold(worst_fixed, |m, p| m.max(p.abs()));
        } else if q > 0.3 && q < 1.0 {
            let rh = lc.inverse(q)?;
            let alternates = samples.windows(2).all(|w| w[0] * w[1] < 0.0);
            let err = samples.iter().fold(0.0_f64, |m, p| m.max((p.abs() - rh).abs()));
            worst_orbit = worst_orbit.max(if alternates { err } else { f64::INFINITY });
        }
    }
    let failed = usize::from(worst_fixed > 1e-8) + usize::from(worst_orbit > 1e-8);
    let mut attractor = aggregate("bifurcation-attractor-log-cosh", grid.len(), worst_fixed, 1e-8, failed, "max_fixed_point_error");
    attractor.measured.insert("max_orbit_error".into(), worst_orbit);

    let period4: Vec<f64> = grid
        .iter()
        .zip(&elud.attractor_samples)
        .filter(|(&q, s)| q > 0.5 && q < 1.0 && detect_period(s, 1e-8, None).period == Period::Periodic(4))
        .map(|(&q, _)| q)
        .collect();
    let found = !period4.is_empty();
    let mut period = aggregate("period-four-elu", grid.len(), period4.len() as f64, 1.0, usize::from(!found), "period_four_points");
    if found {
        period.measured.insert("q_first".into(), period4[0]);
        period.measured.insert("q_last".into(), period4[period4.len() - 1]);
    }
    Ok(vec![attractor, period])
}

fn linear_setup(eta: f64) -> FamilySetup {
    FamilySetup {
        family: Family::Linear,
        rfn: RFunction::from_loss(LOSS),
        toy: ToyModel::LogcoshXy,
        gradient_flow_eta: eta,
        sweep: [4.0 * eta, 2.0 * eta, eta],
    }
}

fn nonlinear_setup(eta: f64) -> FamilySetup {
    FamilySetup {
        family: Family::Nonlinear,
        rfn: RFunction::from_activation(ACTIVATION),
        toy: ToyModel::SqTanh,
        gradient_flow_eta: eta / 2.0,
        sweep: [2.0 * eta, eta, eta / 2.0],
    }
}

pub fn suite(ctx: &Ctx, which: Suite) -> Result<Vec<TheoremVerdict>> {
    let cfg = ctx.cfg;
    let eta = cfg.run.eta;
    let draws = cfg.verify.draws;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut out = Vec::new();
    match which {
        Suite::Linear => {
            out.extend(family_suite(cfg, &linear_setup(eta))?);
            out.push(linear_sandwich(&mut rng, draws)?);
        }
        Suite::Nonlinear => {
            out.extend(family_suite(cfg, &nonlinear_setup(eta))?);
            out.push(nonlinear_sandwich(&mut rng, draws)?);
        }
        Suite::Map => out.extend(map_suite(ctx)?),
        Suite::Hessian => {
            out.push(linear_sandwich(&mut rng, draws)?);
            out.push(eigen_pairing(&mut rng, draws)?);
            out.push(nonlinear_sandwich(&mut rng, draws)?);
        }
        Suite::All => {
            let (lin, non) = ctx.pool.install(|| {
                rayon::join(
                    || family_suite(cfg, &linear_setup(eta)),
                    || family_suite(cfg, &nonlinear_setup(eta)),
                )
            });
            out.extend(lin?);
            out.extend(non?);
            out.extend(map_suite(ctx)?);
            out.push(linear_sandwich(&mut rng, draws)?);
            out.push(eigen_pairing(&mut rng, draws)?);
            out.push(nonlinear_sandwich(&mut rng, draws)?);
        }
    }
    Ok(out)
}

pub fn run(ctx: &Ctx) -> Result<usize> {
    let which = ctx.cfg.verify.suite;
    let verdicts = suite(ctx, which)?;
    let path = ctx.path("report.txt");
    emit::emit_report(&verdicts, &path, &ctx.hash)?;
    let mut failed = 0;
    for v in &verdicts {
        if v.is_failure() {
            failed += 1;
            println!("  FAIL {}: {:?}", v.name, v.notes);
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &verdicts {
        *counts.entry(v.status.as_str()).or_default() += 1;
    }
    let tally: Vec<String> = counts.iter().map(|(k, n)| format!("{n} {k}")).collect();
    println!(
        "verify {}: {} verdicts ({}) -> {}",
        suite_name(which),
        verdicts.len(),
        tally.join(", "),
        path.display()
    );
    Ok(failed)
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Linear => "linear",
        Suite::Nonlinear => "nonlinear",
        Suite::Map => "map",
        Suite::Hessian => "hessian",
        Suite::All => "all",
    }
}
