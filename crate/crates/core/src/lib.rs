//! Canonical reparameterization of gradient descent: ratio functions, the
//! exact two-dimensional recursions, bifurcation analysis of `f_q`, small
//! fully-connected networks, and executable checks of the EoS theorems.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod extract;
pub mod network;
pub mod scalar_models;
pub mod theory;

pub use dynamics::{
    classify_fixed_point, detect_period, map_fq, simulate, simulate_toy, step_linear,
    step_nonlinear, sweep_bifurcation, toy_gd_step, BifurcationDiagram, Family, OrbitReport,
    ReparamPoint, StopCriteria, ToyModel, Trajectory,
};
pub use error::{Error, Result};
pub use extract::{alignment_residual, canonical, extract_trajectory, generalized, Aggregator};
pub use network::{
    forward, gd_step, gram_spectral_norm, hvp, init_xavier, loss_and_grad, sharpness, DataBatch,
    MlpParams, PowerIterConfig,
};
pub use scalar_models::{
    h_linear, h_nonlinear, r_eval, r_hat, validate_assumptions, Activation, RFunction, ScalarLoss,
};
pub use theory::{fit_order, lambda_tilde, regime_constants, TheoremVerdict};
