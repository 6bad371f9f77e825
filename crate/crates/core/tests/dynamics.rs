//! Recursions, orbits and bifurcation sweeps.

use eoslab::dynamics::{
    attractor_samples, classify_fixed_point, detect_period, linspace, map_fq, simulate,
    simulate_toy, step_linear, step_nonlinear, sweep_bifurcation, toy_gd_step, FixedPointClass,
    LinearRecursion, NonlinearRecursion, Period, PureMap, Recording, ReparamPoint, StopCriteria,
    Termination, ToyModel,
};
use eoslab::{Activation, Error, RFunction, ScalarLoss};

fn lc() -> RFunction {
    RFunction::from_loss(ScalarLoss::LogCosh)
}

fn tanh() -> RFunction {
    RFunction::from_activation(Activation::Tanh)
}

#[test]
fn origin_is_fixed_for_every_map() {
    for rfn in [lc(), tanh(), RFunction::from_activation(Activation::Elu)] {
        for q in [0.2, 1.0, 3.0] {
            assert_eq!(map_fq(&rfn, q, 0.0), 0.0);
        }
    }
    assert_eq!(map_fq(&lc(), 2.0, 0.1), 0.1 * (1.0 - lc().eval(0.1)));
}

#[test]
fn classification_of_the_origin() {
    assert_eq!(classify_fixed_point(&lc(), 1.5).unwrap().class, FixedPointClass::StableFixedPoint);
    let rep = classify_fixed_point(&lc(), 0.9).unwrap();
    assert_eq!(rep.class, FixedPointClass::UnstableWithStablePeriod2);
    assert_eq!(rep.c, 0.0);
    assert!(rep.period2_multiplier.unwrap() < 1.0);
    assert!((rep.fixed_point_multiplier - (1.0 - 2.0 / 0.9f64).abs()).abs() < 1e-15);
    assert!(matches!(classify_fixed_point(&lc(), 0.0), Err(Error::Domain { .. })));
    assert!(classify_fixed_point(&lc(), -1.0).is_err());
}

#[test]
fn fixed_points_and_zero_step_size() {
    let s = step_linear(&lc(), ReparamPoint { p: 0.0, q: 0.9 }, 0.01).unwrap();
    assert_eq!((s.p, s.q), (0.0, 0.9));
    let s = step_linear(&lc(), ReparamPoint { p: 1.0, q: 0.9 }, 0.0).unwrap();
    assert_eq!((s.p, s.q), (map_fq(&lc(), 0.9, 1.0), 0.9));
    let s = step_nonlinear(&tanh(), Activation::Tanh, ReparamPoint { p: 0.0, q: 0.5 }, 0.005).unwrap();
    assert_eq!((s.p, s.q), (0.0, 0.5));
    let s = step_nonlinear(&tanh(), Activation::Tanh, ReparamPoint { p: 1.0, q: 0.9 }, 0.0).unwrap();
    assert_eq!((s.p, s.q), (map_fq(&tanh(), 0.9, 1.0), 0.9));
}

#[test]
fn divergence_is_reported() {
    // ELU is unbounded, so eta phi(p)^2 >= 1 is reachable
    let elu = RFunction::from_activation(Activation::Elu);
    let err = step_nonlinear(&elu, Activation::Elu, ReparamPoint { p: 20.0, q: 0.5 }, 0.01).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
    let err = step_linear(&lc(), ReparamPoint { p: 50.0, q: 5.0 }, 0.5).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
    let err = simulate(&LinearRecursion { loss: ScalarLoss::LogCosh }, ReparamPoint { p: 50.0, q: 5.0 }, 0.5, 10, &StopCriteria::default())
        .unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 1, .. }), "{err:?}");
}

#[test]
fn toy_steps_at_minimum_and_elu_branch() {
    assert_eq!(toy_gd_step(ToyModel::LogcoshXy, 0.0, 3.0, 0.08), (0.0, 3.0));
    let (x, y, eta, h) = (-0.3f64, 1.0f64, 0.005, 1e-6);
    let loss = |x: f64, y: f64| ToyModel::SqElu.loss(x, y);
    let gx = (loss(x + h, y) - loss(x - h, y)) / (2.0 * h);
    let gy = (loss(x, y + h) - loss(x, y - h)) / (2.0 * h);
    let (nx, ny) = toy_gd_step(ToyModel::SqElu, x, y, eta);
    assert!((nx - (x - eta * gx)).abs() < 1e-11);
    assert!((ny - (y - eta * gy)).abs() < 1e-11);
    assert_eq!(ToyModel::SqElu.loss(x, y), 0.5 * (x.exp_m1() * y).powi(2));
}

#[test]
fn constant_trajectory_stops_early() {
    let traj = simulate(&LinearRecursion { loss: ScalarLoss::LogCosh }, ReparamPoint { p: 0.0, q: 2.0 }, 0.01, 100, &StopCriteria::default())
        .unwrap();
    assert_eq!(traj.steps.len(), 11);
    assert_eq!(traj.termination, Termination::Converged);
    assert!(traj.steps.iter().all(|r| r.point == ReparamPoint { p: 0.0, q: 2.0 }));
    assert!(traj.steps.windows(2).all(|w| w[1].t == w[0].t + 1));
}

#[test]
fn eos_runs_settle_above_one() {
    let stop = StopCriteria::default();
    let lin = simulate(&LinearRecursion { loss: ScalarLoss::LogCosh }, ReparamPoint { p: 1.0, q: 0.9 }, 0.01, 1_000_000, &stop).unwrap();
    assert!(lin.converged());
    assert!(lin.last().unwrap().point.q > 1.0);
    let eta = 0.005;
    let non = simulate(&NonlinearRecursion { activation: Activation::Tanh }, ReparamPoint { p: 1.0, q: 0.9 }, eta, 1_000_000, &stop).unwrap();
    assert!(non.converged());
    let q = non.last().unwrap().point.q;
    assert!((q - (1.0 + 3.0 * eta / 8.0)).abs() <= 2.0 * eta * eta, "q* = {q}");
    assert!(!non.monitor.triggered());
}

#[test]
fn q_above_stops_the_run() {
    let stop = StopCriteria {
        q_above: Some(1.0),
        ..Default::default()
    };
    let traj = simulate(&LinearRecursion { loss: ScalarLoss::LogCosh }, ReparamPoint { p: 1.0, q: 0.9 }, 0.04, 1_000_000, &stop).unwrap();
    assert_eq!(traj.termination, Termination::QAbove);
    let n = traj.steps.len();
    assert!(traj.steps[n - 1].point.q > 1.0 && traj.steps[n - 2].point.q <= 1.0);
}

#[test]
fn toy_runs_record_exact_sharpness() {
    let traj = simulate_toy(ToyModel::SqTanh, 0.8, 4.0, 0.01, 50, &StopCriteria::default(), Recording::default()).unwrap();
    assert_eq!(traj.steps.len(), 51);
    let r0 = &traj.steps[0];
    assert_eq!(r0.sharpness, Some(ToyModel::SqTanh.sharpness(0.8, 4.0)));
    assert_eq!(r0.point, ToyModel::SqTanh.reparam(0.8, 4.0, 0.01));
    let sparse = Recording {
        sharpness_every: 10,
        lambda_tilde: true,
    };
    let traj = simulate_toy(ToyModel::SqTanh, 0.8, 4.0, 0.01, 50, &StopCriteria::default(), sparse).unwrap();
    for r in &traj.steps {
        assert_eq!(r.sharpness.is_some(), r.t % 10 == 0);
        assert_eq!(r.lambda_tilde.is_some(), r.t % 10 == 0);
    }
}

#[test]
fn vanishing_residual_is_flagged() {
    // f_q(p) = 0 exactly when r(p) = q/2, which is hit by starting there
    let p = lc().inverse(0.45).unwrap();
    let traj = simulate(&PureMap { rfn: lc() }, ReparamPoint { p, q: 0.9 }, 0.0, 5, &StopCriteria::default()).unwrap();
    assert!(traj.steps[1].point.p.abs() < 1e-15);
    let traj2 = simulate(&PureMap { rfn: lc() }, ReparamPoint { p: 0.0, q: 0.9 }, 0.0, 3, &StopCriteria::default()).unwrap();
    assert!(traj2.monitor.triggered());
    assert_eq!(traj2.monitor.first_step, Some(0));
}

#[test]
fn period_detection() {
    let rep = detect_period(&[0.0; 256], 1e-9, None);
    assert_eq!(rep.period, Period::Periodic(1));
    assert_eq!(rep.points, vec![0.0]);

    let tail = attractor_samples(&lc(), 0.9, 10_000, 256, 0.5);
    let rep = detect_period(&tail, 1e-8, Some((&lc(), 0.9)));
    assert_eq!(rep.period, Period::Periodic(2));
    let rh = lc().inverse(0.9).unwrap();
    assert!(rep.points.iter().all(|p| (p.abs() - rh).abs() < 1e-8));
    assert!(rep.points[0] * rep.points[1] < 0.0);
    assert!(rep.multiplier.unwrap() < 1.0);

    let noise: Vec<f64> = (0..256).map(|i| ((i * i) as f64 * 0.37).sin()).collect();
    let rep = detect_period(&noise, 1e-8, None);
    assert_eq!(rep.period, Period::Aperiodic);
    assert!(rep.points.is_empty());
}

#[test]
fn elu_map_has_a_period_four_window() {
    let elu = RFunction::from_activation(Activation::Elu);
    let grid = linspace(0.5, 1.0, 201);
    let found = grid[1..200]
        .iter()
        .any(|&q| detect_period(&attractor_samples(&elu, q, 10_000, 256, 0.5), 1e-8, None).period == Period::Periodic(4));
    assert!(found);
}

#[test]
fn bifurcation_sweep() {
    let grid = vec![0.8, 1.0, 1.01, 1.5];
    let d = sweep_bifurcation(&lc(), &grid, 10_000, 64, 0.5).unwrap();
    assert_eq!(d.attractor_samples.len(), grid.len());
    assert!(d.attractor_samples.iter().all(|s| s.len() == 64));
    let rh = lc().inverse(0.8).unwrap();
    assert!(d.attractor_samples[0].iter().all(|p| (p.abs() - rh).abs() < 1e-8));
    assert!(d.attractor_samples[3].iter().all(|p| p.abs() < 1e-8));
    let at = |i: usize| d.attractor_samples[i].iter().fold(0.0f64, |m, p| m.max(p.abs()));
    assert!(at(1) > at(2) && at(2) > at(3));
    assert!(at(1) < 0.5);
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let grid = linspace(0.3, 1.5, 97);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sweep_bifurcation(&lc(), &grid, 2_000, 32, 0.5).unwrap())
    };
    assert_eq!(run(1), run(4));
}
