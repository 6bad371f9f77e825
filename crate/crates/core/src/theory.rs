//! Executable verdicts for the regime constants, the gradient-flow bound,
//! the two EoS phases, progressive sharpening and the sharpness sandwiches.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Family, Trajectory};
use crate::error::{Error, Result};
use crate::network::{exact_hessian_2layer_linear, symmetric_lambda_max};
use crate::scalar_models::{h_linear, h_nonlinear, Activation, RFunction, ScalarLoss};

/// Relative slack allowed when `λ̃(q_t)` is required to be nondecreasing.
pub const MONOTONE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// `sup{z : z r'(z)/r(z) ≥ −½}`
    pub z0: f64,
    /// `sup{z : z r'(z)/r(z) ≥ −1}`; `+∞` when the level is never reached.
    pub z1: f64,
    pub z1_infinite: bool,
    pub c0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeConstants {
    pub z0: f64,
    pub z1: f64,
    pub z1_infinite: bool,
    pub c0: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    /// The inequality holds but a hypothesis was not certified.
    ConditionalPass,
    Fail,
    Inapplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::ConditionalPass => "conditional-pass",
            Status::Fail => "fail",
            Status::Inapplicable => "inapplicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub name: String,
    pub status: Status,
    pub measured: BTreeMap<String, f64>,
    pub predicted: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl TheoremVerdict {
    fn new(name: &str) -> Self {
        TheoremVerdict {
            name: name.to_string(),
            status: Status::Inapplicable,
            measured: BTreeMap::new(),
            predicted: BTreeMap::new(),
            tolerance: 0.0,
            pass: false,
            notes: Vec::new(),
        }
    }

    fn measured(mut self, key: &str, value: f64) -> Self {
        self.measured.insert(key.to_string(), value);
        self
    }

    fn predicted(mut self, key: &str, value: f64) -> Self {
        self.predicted.insert(key.to_string(), value);
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    fn inapplicable(self, why: impl Into<String>) -> Self {
        let mut v = self.note(why);
        v.status = Status::Inapplicable;
        v.pass = false;
        v
    }

    /// Sets the status from the checked inequality and the hypothesis state.
    fn decide(mut self, holds: bool, certified: bool) -> Self {
        self.status = match (holds, certified) {
            (false, _) => Status::Fail,
            (true, true) => Status::Pass,
            (true, false) => Status::ConditionalPass,
        };
        self.pass = holds;
        self
    }

    pub fn is_failure(&self) -> bool {
        self.status == Status::Fail
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.measured.get(key).copied()
    }
}

fn require_conforming(rfn: &RFunction, family: Family) -> Result<()> {
    let ok = rfn.is_conforming()
        && match family {
            Family::Linear => rfn.loss().is_some(),
            Family::Nonlinear => rfn.activation().is_some(),
        };
    if ok {
        Ok(())
    } else {
        Err(Error::NonConforming(format!("{} for the {family:?} family", rfn.name())))
    }
}

/// `z₀`, `z₁` and `c₀` for a family, before choosing δ.
pub fn regime_thresholds(rfn: &RFunction, family: Family) -> Result<RegimeThresholds> {
    require_conforming(rfn, family)?;
    let z0 = rfn
        .elasticity_crossing(-0.5)
        .ok_or_else(|| Error::NonConforming(format!("{}: z r'/r never reaches -1/2", rfn.name())))?;
    let (z1, z1_infinite) = match rfn.elasticity_crossing(-1.0) {
        Some(z) => (z, false),
        None => (f64::INFINITY, true),
    };
    let r_z1 = if z1_infinite { 0.0 } else { rfn.eval(z1) };
    let c0 = match family {
        Family::Linear => rfn.eval(z0).max(0.5),
        Family::Nonlinear => rfn.eval(z0).max(r_z1 + 0.5),
    };
    Ok(RegimeThresholds {
        z0,
        z1,
        z1_infinite,
        c0,
    })
}

pub fn regime_constants(rfn: &RFunction, family: Family, delta: f64) -> Result<RegimeConstants> {
    let th = regime_thresholds(rfn, family)?;
    if !(delta > 0.0 && delta < 1.0 - th.c0) {
        return Err(Error::Domain {
            what: "delta",
            value: delta,
            domain: "(0, 1 - c0)",
        });
    }
    Ok(RegimeConstants {
        z0: th.z0,
        z1: th.z1,
        z1_infinite: th.z1_infinite,
        c0: th.c0,
        delta,
    })
}

/// `λ̃(q) = (1 + r̂(q) r'(r̂(q))/q)·2/η` for `q ≤ 1`, else `2/η`.
pub fn lambda_tilde(rfn: &RFunction, q: f64, eta: f64) -> Result<f64> {
    if !rfn.is_conforming() {
        return Err(Error::NonConforming(rfn.name()));
    }
    if !(q > 0.0) {
        return Err(Error::Domain {
            what: "q",
            value: q,
            domain: "(0, inf)",
        });
    }
    if q > 1.0 {
        return Ok(2.0 / eta);
    }
    // r̂ is unbounded as q → 0, so the bracket is not capped here. With
    // r(r̂(q)) = q the factor is the elasticity form, which avoids the
    // cancellation in 1 + p r′/q for small q.
    let p = rfn.inverse_within(q, f64::MAX)?;
    Ok(rfn.elasticity_plus_one(p) * 2.0 / eta)
}

fn initial_state(traj: &Trajectory) -> Result<(f64, f64)> {
    traj.initial()
        .map(|r| (r.point.p, r.point.q))
        .ok_or_else(|| Error::Shape("empty trajectory".into()))
}

/// Sandwich `q₀ ≤ q* ≤ exp(·) q₀` for a run started in the gradient-flow regime.
pub fn check_gradient_flow(traj: &Trajectory, rfn: &RFunction, family: Family) -> Result<TheoremVerdict> {
    require_conforming(rfn, family)?;
    let (p0, q0) = initial_state(traj)?;
    let eta = traj.eta;
    let r1 = rfn.eval(1.0);
    let v = TheoremVerdict::new(match family {
        Family::Linear => "gradient-flow-linear",
        Family::Nonlinear => "gradient-flow-nonlinear",
    })
    .measured("q0", q0)
    .measured("p0", p0)
    .measured("eta", eta);

    let (eta_max, q_lo, q_hi, exponent) = match family {
        Family::Linear => {
            let c = 8.0 * q0 / (2.0 * (q0 - 1.0) / q0).min(r1 / (2.0 * q0));
            (2.0 / 33.0, 2.0 / (2.0 - eta), (1.0 / (16.0 * eta)).min(r1 / (2.0 * eta)), c * eta * eta)
        }
        Family::Nonlinear => {
            let e = 2.0 * eta / (2.0 * (q0 - 1.0) / q0).min(r1 / q0);
            (r1 / (2.0 * (r1 + 2.0)), 1.0 / (1.0 - 2.0 * eta), r1 / (4.0 * eta), e)
        }
    };
    let v = v
        .predicted("eta_max", eta_max)
        .predicted("q0_lower", q_lo)
        .predicted("q0_upper", q_hi);
    if !(eta > 0.0 && eta < eta_max) {
        return Ok(v.inapplicable(format!("eta = {eta} outside (0, {eta_max})")));
    }
    if p0.abs() > 1.0 {
        return Ok(v.inapplicable(format!("|p0| = {} > 1", p0.abs())));
    }
    if !(q0 > q_lo && q0 < q_hi) {
        return Ok(v.inapplicable(format!("q0 = {q0} outside ({q_lo}, {q_hi})")));
    }
    let q_star = traj.last().map(|r| r.point.q).unwrap_or(q0);
    let upper = exponent.exp() * q0;
    let mut v = v
        .measured("q_star", q_star)
        .predicted("q_star_lower", q0)
        .predicted("q_star_upper", upper)
        .predicted("exponent", exponent)
        .measured("slack", upper - q_star);
    if family == Family::Linear {
        v = v.predicted("C", exponent / (eta * eta));
    }
    if !traj.converged() {
        return Ok(v.note("trajectory did not converge").decide(false, true));
    }
    let holds = q0 <= q_star && q_star <= upper;
    Ok(v.decide(holds, !traj.monitor.triggered()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EosOptions {
    /// Refuse (inapplicable) instead of downgrading when the initialization
    /// hypotheses `|p₀| ≤ 1`, `q₀ ∈ (c₀, 1 − δ)` are not met.
    pub enforce_hypotheses: bool,
    /// δ of the hypotheses; `None` accepts any δ, i.e. requires `q₀ ∈ (c₀, 1)`.
    pub delta: Option<f64>,
}

impl Default for EosOptions {
    fn default() -> Self {
        EosOptions {
            enforce_hypotheses: true,
            delta: None,
        }
    }
}

/// Returns the reason the EoS hypotheses fail, if they do.
fn eos_hypotheses(rfn: &RFunction, family: Family, p0: f64, q0: f64, opts: &EosOptions) -> Option<String> {
    if p0.abs() > 1.0 {
        return Some(format!("|p0| = {} > 1", p0.abs()));
    }
    let th = match regime_thresholds(rfn, family) {
        Ok(th) => th,
        Err(e) => return Some(e.to_string()),
    };
    let upper = match opts.delta {
        Some(delta) => match regime_constants(rfn, family, delta) {
            Ok(_) => 1.0 - delta,
            Err(e) => return Some(format!("{e} with c0 = {}", th.c0)),
        },
        None => 1.0,
    };
    if th.c0 >= 1.0 {
        return Some(format!("c0 = {} leaves no admissible initialization", th.c0));
    }
    if !(q0 > th.c0 && q0 < upper) {
        return Some(format!("q0 = {q0} outside ({}, {upper})", th.c0));
    }
    None
}

fn h_value(rfn: &RFunction, family: Family, p: f64) -> Result<f64> {
    match family {
        Family::Linear => h_linear(rfn, p),
        Family::Nonlinear => h_nonlinear(rfn, p),
    }
}

/// Phase-I entry time `t_a` and the residual band after it.
///
/// `t_a` is the first `t` with `|s_t − 1 − h(p_t)η^k| ≤ tol_mult·η^{2k}`; the
/// band must then hold at every recorded `t ≥ t_a` with `q_t ≤ 1`.
pub fn measure_phase1(
    traj: &Trajectory,
    rfn: &RFunction,
    family: Family,
    tol_mult: f64,
    opts: &EosOptions,
) -> Result<TheoremVerdict> {
    require_conforming(rfn, family)?;
    let (p0, q0) = initial_state(traj)?;
    let eta = traj.eta;
    let k = family.order();
    let band = tol_mult * eta.powi(2 * k);
    let mut v = TheoremVerdict::new(match family {
        Family::Linear => "phase1-linear",
        Family::Nonlinear => "phase1-nonlinear",
    })
    .measured("q0", q0)
    .measured("p0", p0)
    .measured("eta", eta)
    .predicted("band", band);
    v.tolerance = band;
    if q0 >= 1.0 {
        return Ok(v.inapplicable(format!("q0 = {q0} >= 1 is the gradient-flow regime")));
    }
    let mut certified = !traj.monitor.triggered();
    if !certified {
        v = v.note("p_t vanished while q_t < 1");
    }
    if let Some(why) = eos_hypotheses(rfn, family, p0, q0, opts) {
        if opts.enforce_hypotheses {
            return Ok(v.inapplicable(why));
        }
        certified = false;
        v = v.note(format!("hypothesis not met: {why}"));
    }

    let eta_k = eta.powi(k);
    let mut t_a = None;
    let mut worst_after = 0.0_f64;
    let mut worst_step = None;
    let mut min_before = f64::INFINITY;
    for rec in &traj.steps {
        let res = (rec.s - 1.0 - h_value(rfn, family, rec.point.p)? * eta_k).abs();
        match t_a {
            None => {
                min_before = min_before.min(res);
                if res <= band {
                    t_a = Some(rec.t);
                }
            }
            Some(_) if rec.point.q <= 1.0 => {
                if !(res <= worst_after) {
                    worst_after = res;
                    worst_step = Some(rec.t);
                }
            }
            Some(_) => break,
        }
    }
    let Some(t_a) = t_a else {
        return Ok(v
            .measured("min_residual", min_before)
            .note("band never entered")
            .decide(false, certified));
    };
    let v = v
        .measured("t_a", t_a as f64)
        .measured("max_residual_after_t_a", worst_after);
    let holds = worst_after <= band;
    let v = match worst_step {
        Some(t) if !holds => v.measured("worst_step", t as f64),
        _ => v,
    };
    Ok(v.decide(holds, certified))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitingQConfig {
    /// Residual bound is `c_res·η^{2k}`.
    pub c_res: f64,
    /// Lower bound on `t_b` is `c_tb·(1 − q₀)·η^{−k}`.
    pub c_tb: f64,
}

impl Default for LimitingQConfig {
    fn default() -> Self {
        LimitingQConfig { c_res: 2.0, c_tb: 1.0 }
    }
}

/// Predicted `q* = 1 − η²/(2 r''(0))` (linear) or `1 − η/r''(0)` (nonlinear).
pub fn predicted_q_star(rfn: &RFunction, family: Family, eta: f64) -> f64 {
    let k = family.order();
    1.0 - eta.powi(k) / (2f64.powi(k - 1) * rfn.r2_at_zero())
}

/// Predicted limiting sharpness `2/η − η/|r''(0)|` (linear) or `2/η − 2/|r''(0)|` (nonlinear).
pub fn predicted_limiting_sharpness(rfn: &RFunction, family: Family, eta: f64) -> f64 {
    let r2 = rfn.r2_at_zero().abs();
    match family {
        Family::Linear => 2.0 / eta - eta / r2,
        Family::Nonlinear => 2.0 / eta - 2.0 / r2,
    }
}

/// Phase-II limit `q*` and the last crossing `t_b`.
pub fn check_limiting_q(
    traj: &Trajectory,
    rfn: &RFunction,
    family: Family,
    cfg: &LimitingQConfig,
    opts: &EosOptions,
) -> Result<TheoremVerdict> {
    require_conforming(rfn, family)?;
    let (p0, q0) = initial_state(traj)?;
    let eta = traj.eta;
    let k = family.order();
    let predicted = predicted_q_star(rfn, family, eta);
    let bound = cfg.c_res * eta.powi(2 * k);
    let mut v = TheoremVerdict::new(match family {
        Family::Linear => "limiting-q-linear",
        Family::Nonlinear => "limiting-q-nonlinear",
    })
    .measured("q0", q0)
    .measured("eta", eta)
    .predicted("q_star", predicted)
    .predicted("residual_bound", bound)
    .predicted("limiting_sharpness", predicted_limiting_sharpness(rfn, family, eta));
    v.tolerance = bound;
    if q0 >= 1.0 {
        return Ok(v.inapplicable(format!("q0 = {q0} >= 1 is the gradient-flow regime")));
    }
    let mut certified = !traj.monitor.triggered();
    if !certified {
        v = v.note("p_t vanished while q_t < 1");
    }
    if let Some(why) = eos_hypotheses(rfn, family, p0, q0, opts) {
        if opts.enforce_hypotheses {
            return Ok(v.inapplicable(why));
        }
        certified = false;
        v = v.note(format!("hypothesis not met: {why}"));
    }
    let q_star = traj.last().map(|r| r.point.q).unwrap_or(q0);
    let residual = (q_star - predicted).abs();
    let t_b = traj.steps.iter().rev().find(|r| r.point.q <= 1.0).map(|r| r.t);
    let t_b_lower = cfg.c_tb * (1.0 - q0) * eta.powi(-k);
    let mut v = v
        .measured("q_star", q_star)
        .measured("residual", residual)
        .measured("limiting_sharpness", 2.0 / (eta * q_star))
        .predicted("t_b_lower", t_b_lower);
    if let Some(t) = t_b {
        v = v.measured("t_b", t as f64);
    }
    if !traj.converged() {
        return Ok(v.note("trajectory did not converge").decide(false, certified));
    }
    let mut holds = true;
    if !(q_star > 1.0) {
        holds = false;
        v = v.note("q* <= 1");
    }
    if !(residual <= bound) {
        holds = false;
        v = v.note("residual exceeds bound");
    }
    match t_b {
        Some(t) if t as f64 >= t_b_lower => {}
        _ => {
            holds = false;
            v = v.note("t_b below its lower bound");
        }
    }
    Ok(v.decide(holds, certified))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpeningConfig {
    /// Linear family: gap bound `1 + c_gap·η`.
    pub c_gap: f64,
    /// Nonlinear family: constant gap bound.
    pub nonlinear_gap: f64,
}

impl Default for SharpeningConfig {
    fn default() -> Self {
        SharpeningConfig {
            c_gap: 10.0,
            nonlinear_gap: 5.0,
        }
    }
}

/// Monotonicity of `λ̃(q_t)` over the run and `|λ_max − λ̃(q_t)|` for `t ≥ t_a`.
pub fn check_progressive_sharpening(
    traj: &Trajectory,
    rfn: &RFunction,
    family: Family,
    t_a: usize,
    cfg: &SharpeningConfig,
) -> Result<TheoremVerdict> {
    require_conforming(rfn, family)?;
    let eta = traj.eta;
    let gap_bound = match family {
        Family::Linear => 1.0 + cfg.c_gap * eta,
        Family::Nonlinear => cfg.nonlinear_gap,
    };
    let mut v = TheoremVerdict::new(match family {
        Family::Linear => "progressive-sharpening-linear",
        Family::Nonlinear => "progressive-sharpening-nonlinear",
    })
    .measured("eta", eta)
    .measured("t_a", t_a as f64)
    .predicted("gap_bound", gap_bound);
    v.tolerance = gap_bound;

    let mut prev: Option<f64> = None;
    let mut worst_drop = 0.0_f64;
    let mut drop_step = None;
    let mut worst_gap = 0.0_f64;
    let mut gap_step = None;
    let mut samples = 0usize;
    for rec in &traj.steps {
        let lt = match rec.lambda_tilde {
            Some(x) => x,
            None => lambda_tilde(rfn, rec.point.q, eta)?,
        };
        if let Some(p) = prev {
            let drop = (p - lt) / p.abs();
            if drop > MONOTONE_RTOL && drop > worst_drop {
                worst_drop = drop;
                drop_step = Some(rec.t);
            }
        }
        prev = Some(lt);
        if rec.t >= t_a {
            if let Some(sharp) = rec.sharpness {
                samples += 1;
                let gap = (sharp - lt).abs();
                if !(gap <= worst_gap) {
                    worst_gap = gap;
                    gap_step = Some(rec.t);
                }
            }
        }
    }
    v = v
        .measured("max_relative_drop", worst_drop)
        .measured("max_gap", worst_gap)
        .measured("gap_samples", samples as f64);
    if let Some(t) = drop_step {
        v = v.measured("drop_step", t as f64).note("lambda_tilde decreased");
    }
    if let Some(t) = gap_step {
        v = v.measured("max_gap_step", t as f64);
    }
    if samples == 0 {
        v = v.note("no sharpness samples at or after t_a");
    }
    let holds = drop_step.is_none() && worst_gap <= gap_bound && samples > 0;
    Ok(v.decide(holds, !traj.monitor.triggered()))
}

/// `(h_xx, h_xy, h_yy)` of `½(φ(x)y)²`.
fn neuron_hessian(act: Activation, x: f64, y: f64) -> (f64, f64, f64) {
    let (f, f1, f2) = (act.eval(x), act.d1(x), act.d2(x));
    ((f * f2 + f1 * f1) * y * y, 2.0 * f * f1 * y, f * f)
}

/// `(r + x r')y² ≤ λ_max ≤ (r + x r')y² + 4x²r/(r + x r')` for the single neuron.
pub fn check_sharpness_sandwich_nonlinear(x: f64, y: f64, act: Activation) -> Result<TheoremVerdict> {
    let rfn = RFunction::from_activation(act);
    require_conforming(&rfn, Family::Nonlinear)?;
    let r = rfn.eval(x);
    let center = r + x * rfn.d1(x);
    let v = TheoremVerdict::new("sharpness-sandwich-nonlinear")
        .measured("x", x)
        .measured("y", y);
    if !(center >= 0.0) {
        return Ok(v.inapplicable(format!("r(x) + x r'(x) = {center} < 0")));
    }
    let (a, b, c) = neuron_hessian(act, x, y);
    let lambda = crate::dynamics::sym2_lambda_max(a, b, c);
    let lower = center * y * y;
    let upper = if x == 0.0 { lower } else { lower + 4.0 * x * x * r / center };
    let tol = 1e-12 * lower.abs().max(upper.abs()).max(1.0);
    let mut v = v
        .measured("lambda_max", lambda)
        .predicted("lower", lower)
        .predicted("upper", upper);
    v.tolerance = tol;
    let holds = lambda >= lower - tol && lambda <= upper + tol;
    Ok(v.decide(holds, true))
}

/// `|λ_max − ℓ''(p)(‖Ux‖² + ‖v‖²)| ≤ 1` for the two-layer linear network,
/// with `λ_max` from the dense Hessian.
pub fn check_sharpness_sandwich_linear(
    u: &DMatrix<f64>,
    v: &DVector<f64>,
    x: &DVector<f64>,
    loss: ScalarLoss,
) -> Result<TheoremVerdict> {
    let h = exact_hessian_2layer_linear(u, v, x, 0.0, loss.into())?;
    let lambda = symmetric_lambda_max(h);
    let ux = u * x;
    let p = v.dot(&ux);
    let center = loss.d2(p) * (ux.norm_squared() + v.norm_squared());
    let gap = (lambda - center).abs();
    let mut verdict = TheoremVerdict::new("sharpness-sandwich-linear")
        .measured("lambda_max", lambda)
        .measured("gap", gap)
        .measured("x_norm", x.norm())
        .predicted("center", center)
        .predicted("gap_bound", 1.0);
    verdict.tolerance = 1.0;
    Ok(verdict.decide(gap <= 1.0, (x.norm() - 1.0).abs() <= 1e-12))
}

/// Least-squares slope of `log(residual)` against `log(η)`.
pub fn fit_order(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::Shape(format!("{} pairs; at least 3 required", pairs.len())));
    }
    if let Some(&(e, r)) = pairs.iter().find(|(e, r)| !(*e > 0.0 && *r > 0.0)) {
        return Err(Error::Domain {
            what: if e > 0.0 { "residual" } else { "eta" },
            value: if e > 0.0 { r } else { e },
            domain: "(0, inf)",
        });
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|(e, _)| e.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, r)| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Shape("all eta values coincide".into()));
    }
    Ok(sxy / sxx)
}
