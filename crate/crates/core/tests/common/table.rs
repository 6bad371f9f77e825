//! Every frozen oracle value paired with the library's reproduction of it.

use super::Fixtures;
use eoslab::dynamics::{classify_fixed_point, map_fq, step_linear, step_nonlinear, toy_gd_step, ReparamPoint, ToyModel};
use eoslab::extract::{generalized, Aggregator};
use eoslab::network::{forward, gram_spectral_norm, DataBatch, MlpParams};
use eoslab::scalar_models::{h_linear, h_nonlinear, validation_grid, Activation, RFunction, ScalarLoss};
use eoslab::theory::{check_sharpness_sandwich_nonlinear, lambda_tilde, regime_thresholds};
use eoslab::Family;
use nalgebra::{DMatrix, DVector};

/// Fixture leaves that are oracle inputs rather than outputs.
pub const INPUT_KEYS: &[&str] = &[
    "classify_tanh_below_c/q",
    "toy_step/logcosh-xy/eta",
    "toy_step/logcosh-xy/x",
    "toy_step/logcosh-xy/y",
    "toy_step/sq-elu/eta",
    "toy_step/sq-elu/x",
    "toy_step/sq-elu/y",
    "toy_step/sq-tanh/eta",
    "toy_step/sq-tanh/x",
    "toy_step/sq-tanh/y",
];

pub enum Tol {
    Abs(f64),
    Rel(f64),
}

pub struct Row {
    pub key: String,
    pub got: f64,
    pub want: f64,
    pub tol: Tol,
}

impl Row {
    pub fn error(&self) -> f64 {
        match self.tol {
            Tol::Abs(_) => (self.got - self.want).abs(),
            Tol::Rel(_) => (self.got - self.want).abs() / self.want.abs().max(f64::MIN_POSITIVE),
        }
    }

    pub fn ok(&self) -> bool {
        let limit = match self.tol {
            Tol::Abs(t) | Tol::Rel(t) => t,
        };
        self.error() <= limit
    }
}

pub fn rows(fx: &Fixtures) -> Vec<Row> {
    let lc = RFunction::from_loss(ScalarLoss::LogCosh);
    let sq = RFunction::from_loss(ScalarLoss::SquareRoot);
    let tanh = RFunction::from_activation(Activation::Tanh);
    let mut out = Vec::new();
    let mut push = |key: &str, got: f64, tol: Tol| {
        out.push(Row {
            key: key.to_string(),
            got,
            want: fx.num(key),
            tol,
        });
    };

    for (name, rfn) in [("log-cosh", lc), ("square-root", sq), ("tanh", tanh)] {
        push(&format!("series/{name}/r2_at_zero"), rfn.r2_at_zero(), Tol::Rel(1e-15));
        push(&format!("series/{name}/r4_at_zero"), rfn.r4_at_zero(), Tol::Rel(1e-15));
    }
    push("r_eval/square_root_at_sqrt3", sq.eval(3f64.sqrt()), Tol::Rel(1e-15));
    push("r_eval/tanh_at_1", tanh.eval(1.0), Tol::Rel(1e-15));

    push("r_hat/square_root_at_half", sq.inverse(0.5).unwrap(), Tol::Abs(1e-12));
    push("r_hat/log_cosh_at_0p9", lc.inverse(0.9).unwrap(), Tol::Abs(1e-12));
    push("r_hat/log_cosh_at_0p8", lc.inverse(0.8).unwrap(), Tol::Abs(1e-12));
    push("r_hat/tanh_at_half", tanh.inverse(0.5).unwrap(), Tol::Abs(1e-12));

    for p in ["0.3", "1.0", "2.5"] {
        let x: f64 = p.parse().unwrap();
        push(&format!("h/linear_log_cosh/{p}"), h_linear(&lc, x).unwrap(), Tol::Rel(1e-12));
    }
    push("h/linear_log_cosh_at_0", h_linear(&lc, 0.0).unwrap(), Tol::Rel(1e-15));
    push("h/linear_square_root_at_0", h_linear(&sq, 0.0).unwrap(), Tol::Rel(1e-15));
    push("h/nonlinear_tanh_at_0", h_nonlinear(&tanh, 0.0).unwrap(), Tol::Rel(1e-15));
    push("h/nonlinear_tanh_at_2", h_nonlinear(&tanh, 2.0).unwrap(), Tol::Rel(1e-12));
    let grid: Vec<f64> = validation_grid().into_iter().map(|p| h_nonlinear(&tanh, p).unwrap()).collect();
    push("h/nonlinear_tanh_grid_sup", grid.iter().copied().fold(f64::MIN, f64::max), Tol::Rel(1e-12));
    // the h evaluation near the grid edge carries the cancellation of s - 1
    push("h/nonlinear_tanh_grid_min", grid.iter().copied().fold(f64::MAX, f64::min), Tol::Rel(1e-7));

    push("map_fq_log_cosh_q2_p0p1", map_fq(&lc, 2.0, 0.1), Tol::Rel(1e-13));
    push("map_fq_log_cosh_q0p8_at_rhat", map_fq(&lc, 0.8, lc.inverse(0.8).unwrap()), Tol::Abs(1e-12));

    let s = step_linear(&lc, ReparamPoint { p: 1.0, q: 0.9 }, 0.01).unwrap();
    push("step_linear_log_cosh/p", s.p, Tol::Rel(1e-14));
    push("step_linear_log_cosh/q", s.q, Tol::Rel(1e-15));
    let s = step_nonlinear(&tanh, Activation::Tanh, ReparamPoint { p: 0.8, q: 0.7 }, 0.005).unwrap();
    push("step_nonlinear_tanh/p", s.p, Tol::Rel(1e-14));
    push("step_nonlinear_tanh/q", s.q, Tol::Rel(1e-15));

    for (model, name) in [
        (ToyModel::SqTanh, "sq-tanh"),
        (ToyModel::SqElu, "sq-elu"),
        (ToyModel::LogcoshXy, "logcosh-xy"),
    ] {
        let x = fx.num(&format!("toy_step/{name}/x"));
        let y = fx.num(&format!("toy_step/{name}/y"));
        let eta = fx.num(&format!("toy_step/{name}/eta"));
        let (nx, ny) = toy_gd_step(model, x, y, eta);
        push(&format!("toy_step/{name}/x_next"), nx, Tol::Rel(1e-14));
        push(&format!("toy_step/{name}/y_next"), ny, Tol::Rel(1e-14));
    }

    push("toy_hessian_lmax/sq-tanh_x0p5_y3", ToyModel::SqTanh.sharpness(0.5, 3.0), Tol::Abs(1e-8));
    push("toy_hessian_lmax/sq-tanh_x1p2_ym0p7", ToyModel::SqTanh.sharpness(1.2, -0.7), Tol::Abs(1e-8));
    push("toy_hessian_lmax/logcosh-xy_x0p4_y2p5", ToyModel::LogcoshXy.sharpness(0.4, 2.5), Tol::Abs(1e-8));

    let sw = check_sharpness_sandwich_nonlinear(0.5, 3.0, Activation::Tanh).unwrap();
    push("sandwich_tanh_x0p5_y3/lower", sw.predicted["lower"], Tol::Rel(1e-13));
    push("sandwich_tanh_x0p5_y3/upper", sw.predicted["upper"], Tol::Rel(1e-13));

    let th = regime_thresholds(&lc, Family::Linear).unwrap();
    push("regime/log_cosh_z0", th.z0, Tol::Abs(1e-9));
    push("regime/log_cosh_r_z0", lc.eval(th.z0), Tol::Abs(1e-9));
    let th = regime_thresholds(&tanh, Family::Nonlinear).unwrap();
    push("regime/tanh_z0", th.z0, Tol::Abs(1e-9));
    push("regime/tanh_r_z0", tanh.eval(th.z0), Tol::Abs(1e-9));
    push("regime/tanh_z1", th.z1, Tol::Abs(1e-9));
    push("regime/tanh_r_z1", tanh.eval(th.z1), Tol::Abs(1e-9));
    let p = tanh.inverse(0.5).unwrap();
    push("regime/tanh_condition_iv", p * tanh.d1(p), Tol::Abs(1e-10));

    let rep = classify_fixed_point(&tanh, fx.num("classify_tanh_below_c/q")).unwrap();
    push("classify_tanh_below_c/multiplier", rep.period2_multiplier.unwrap_or(f64::NAN), Tol::Rel(1e-9));

    push("lambda_tilde_log_cosh_q0p8_eta0p01", lambda_tilde(&lc, 0.8, 0.01).unwrap(), Tol::Rel(1e-11));

    let net = MlpParams::two_layer(
        DMatrix::from_row_slice(2, 2, &[0.5, -0.3, 0.8, 0.1]),
        &DVector::from_vec(vec![1.2, -0.7]),
        Activation::Tanh,
    )
    .unwrap();
    push("forward_tanh_2x2_e1", forward(&net, &DVector::from_vec(vec![1.0, 0.0])).unwrap(), Tol::Rel(1e-14));

    let net = MlpParams::two_layer(
        DMatrix::from_row_slice(2, 2, &[0.6, -0.2, 0.3, 0.9]),
        &DVector::from_vec(vec![0.5, -1.1]),
        Activation::Linear,
    )
    .unwrap();
    let batch = DataBatch::new(
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.4, -0.8, -0.5, 0.7]),
        DVector::from_vec(vec![0.2, -0.1, 0.3]),
    )
    .unwrap();
    push("generalized_hand_linear_n3/lambda_max_gram", gram_spectral_norm(&net, &batch).unwrap(), Tol::Rel(1e-12));
    let point = generalized(&net, &batch, 0.01, Aggregator::Mean).unwrap();
    push("generalized_hand_linear_n3/q", point.q, Tol::Rel(1e-12));
    push("generalized_hand_linear_n3/p_mean", point.p, Tol::Abs(1e-15));
    out
}
