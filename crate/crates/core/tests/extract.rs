//! Reparameterizing live network state.

use eoslab::extract::{alignment_residual, canonical, extract_run, extract_trajectory, generalized, Aggregator, ReparamSpec, TrainingRun};
use eoslab::network::{gd_step, init_xavier, output_and_grad, sharpness, DataBatch, MlpParams, PowerIterConfig};
use eoslab::scalar_models::h_linear;
use eoslab::theory::{measure_phase1, EosOptions};
use eoslab::{Activation, Family, RFunction, ScalarLoss};
use nalgebra::{DMatrix, DVector};

fn e1(d: usize) -> DVector<f64> {
    let mut x = DVector::zeros(d);
    x[0] = 1.0;
    x
}

#[test]
fn canonical_for_the_linear_network() {
    let u = DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.6]);
    let v = DVector::from_vec(vec![0.7, -0.1, 0.2]);
    let x = DVector::from_vec(vec![0.6, 0.8]);
    let params = MlpParams::two_layer(u.clone(), &v, Activation::Linear).unwrap();
    let eta = 0.01;
    let point = canonical(&params, &x, 0.0, eta).unwrap();
    let ux = &u * &x;
    assert!((point.p - v.dot(&ux)).abs() <= 1e-15);
    let q = 2.0 / (eta * (ux.norm_squared() + v.norm_squared()));
    assert!((point.q - q).abs() <= 1e-13 * q);
}

#[test]
fn single_neuron_at_the_origin() {
    // f(1) = y tanh(x) with parameters (x, y)
    for y in [0.5, 2.0, -3.0] {
        let params = MlpParams::two_layer(DMatrix::from_element(1, 1, 0.0), &DVector::from_element(1, y), Activation::Tanh).unwrap();
        let point = canonical(&params, &DVector::from_element(1, 1.0), 0.0, 0.01).unwrap();
        assert_eq!(point.p, 0.0);
        assert!((point.q - 2.0 / (0.01 * y * y)).abs() <= 1e-12 * point.q);
    }
}

#[test]
fn definitional_identity() {
    for seed in 0..10 {
        let params = init_xavier(&[4, 16, 16, 1], 1.5, seed, Activation::Tanh).unwrap();
        let x = DataBatch::gaussian(1, 4, seed).unwrap().input(0);
        let eta = 0.03;
        let point = canonical(&params, &x, 0.2, eta).unwrap();
        let (_, g) = output_and_grad(&params, &x).unwrap();
        assert!((point.q * eta * g.norm_squared() / 2.0 - 1.0).abs() <= 1e-14);
    }
}

#[test]
fn generalized_reduces_to_canonical() {
    let params = init_xavier(&[5, 32, 1], 2.0, 3, Activation::Tanh).unwrap();
    let x = DataBatch::gaussian(1, 5, 8).unwrap().input(0);
    let batch = DataBatch::single(&x, 0.4);
    let a = canonical(&params, &x, 0.4, 0.01).unwrap();
    let b = generalized(&params, &batch, 0.01, Aggregator::Mean).unwrap();
    assert_eq!(a, b);
    let c = generalized(&params, &batch, 0.01, Aggregator::L2).unwrap();
    assert_eq!(c.p, a.p.abs());
    assert_eq!(c.q, a.q);
}

#[test]
fn extraction_is_read_only() {
    let params = init_xavier(&[3, 8, 1], 1.0, 0, Activation::Tanh).unwrap();
    let batch = DataBatch::gaussian(4, 3, 1).unwrap();
    let copy = params.clone();
    let bcopy = batch.clone();
    let _ = canonical(&params, &batch.input(0), 0.0, 0.01).unwrap();
    let _ = generalized(&params, &batch, 0.01, Aggregator::Linf).unwrap();
    let run = TrainingRun {
        params0: params.clone(),
        batch: batch.clone(),
        loss: ScalarLoss::LogCosh,
        eta: 0.01,
        steps: 3,
    };
    let _ = extract_trajectory(&run, &ReparamSpec::default()).unwrap();
    assert_eq!(params, copy);
    assert_eq!(batch, bcopy);
    assert_eq!(run.params0, copy);
}

#[test]
fn sharpness_at_a_global_minimum() {
    let u = DMatrix::from_row_slice(2, 3, &[0.5, 0.1, -0.3, 0.2, 0.9, 0.4]);
    let x = e1(3);
    let ux = &u * &x;
    let v = DVector::from_vec(vec![-ux[1], ux[0]]);
    let params = MlpParams::two_layer(u, &v, Activation::Linear).unwrap();
    let eta = 0.01;
    let point = canonical(&params, &x, 0.0, eta).unwrap();
    assert_eq!(point.p, 0.0);
    let cfg = PowerIterConfig::default();
    let est = sharpness(&params, &DataBatch::single(&x, 0.0), ScalarLoss::LogCosh.into(), &cfg).unwrap();
    let want = ScalarLoss::LogCosh.d2(0.0) * 2.0 / (eta * point.q);
    assert!((est.value - want).abs() <= cfg.rel_tol * want);
}

#[test]
fn one_step_run() {
    let params = init_xavier(&[10, 32, 1], 3.0, 5, Activation::Linear).unwrap();
    let batch = DataBatch::unit_point(10, 0.0);
    let run = TrainingRun {
        params0: params.clone(),
        batch: batch.clone(),
        loss: ScalarLoss::LogCosh,
        eta: 0.01,
        steps: 1,
    };
    let ex = extract_run(&run, &ReparamSpec::default()).unwrap();
    assert_eq!(ex.trajectory.steps.len(), 2);
    let after = gd_step(&params, &batch, ScalarLoss::LogCosh.into(), 0.01).unwrap();
    assert_eq!(ex.final_params, after);
    let last = ex.trajectory.last().unwrap();
    assert_eq!(last.t, 1);
    assert_eq!(last.point, canonical(&after, &e1(10), 0.0, 0.01).unwrap());
    assert!(last.sharpness.is_some() && last.lambda_tilde.is_some());
}

#[test]
fn sharpness_cadence() {
    let run = TrainingRun {
        params0: init_xavier(&[4, 8, 1], 2.0, 1, Activation::Linear).unwrap(),
        batch: DataBatch::unit_point(4, 0.0),
        loss: ScalarLoss::LogCosh,
        eta: 0.01,
        steps: 25,
    };
    let spec = ReparamSpec {
        sharpness_every: 10,
        ..Default::default()
    };
    let traj = extract_trajectory(&run, &spec).unwrap();
    assert_eq!(traj.steps.len(), 26);
    for r in &traj.steps {
        assert_eq!(r.sharpness.is_some(), r.t % 10 == 0);
    }
}

#[test]
fn gradient_flow_and_eos_runs() {
    let lc = RFunction::from_loss(ScalarLoss::LogCosh);
    let eta = 0.01;
    let spec = ReparamSpec {
        sharpness_every: 0,
        ..Default::default()
    };
    let gf = TrainingRun {
        params0: init_xavier(&[10, 256, 1], 5.0, 0, Activation::Linear).unwrap(),
        batch: DataBatch::unit_point(10, 0.0),
        loss: ScalarLoss::LogCosh,
        eta,
        steps: 2_000,
    };
    let traj = extract_trajectory(&gf, &spec).unwrap();
    assert!(traj.steps.iter().all(|r| r.point.q > 1.0));

    let eos = TrainingRun {
        params0: init_xavier(&[10, 256, 1], 10.0, 0, Activation::Linear).unwrap(),
        steps: 40_000,
        ..gf
    };
    let traj = extract_trajectory(&eos, &spec).unwrap();
    let last = traj.last().unwrap();
    assert!((last.point.q - 1.0).abs() < 1e-3, "q = {}", last.point.q);
    assert!((last.s - 1.0).abs() < 1e-3, "s = {}", last.s);

    let relaxed = EosOptions {
        enforce_hypotheses: false,
        delta: None,
    };
    let t_a = measure_phase1(&traj, &lc, Family::Linear, 2.0, &relaxed).unwrap().get("t_a").unwrap() as usize;
    let h_max = h_linear(&lc, 0.0).unwrap();
    let residual = alignment_residual(&traj, &lc);
    for r in &traj.steps[t_a..] {
        if r.point.q > 1.0 {
            break;
        }
        assert!(residual[r.t] <= h_max * eta * eta + 2.0 * eta.powi(4), "t {}: {}", r.t, residual[r.t]);
    }
}
