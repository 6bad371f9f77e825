//! The map f_q, the exact 2-D reparameterized recursions, toy-model gradient
//! descent, orbit detection and bifurcation sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar_models::{Activation, RFunction, ScalarLoss};

/// Steps with `q < 1` and `|p|` below this are flagged by [`simulate`].
pub const VANISHING_P: f64 = 1e-30;

pub const DEFAULT_MAX_PERIOD: usize = 64;
pub const DEFAULT_PERIOD_TOL: f64 = 1e-8;
pub const DEFAULT_P0: f64 = 0.5;
pub const DEFAULT_BURN_IN: usize = 10_000;
pub const DEFAULT_SAMPLES: usize = 256;

/// The reparameterized state: residual `p` and normalized inverse sharpness `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReparamPoint {
    pub p: f64,
    pub q: f64,
}

impl ReparamPoint {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::Domain {
                what: "p",
                value: p,
                domain: "finite reals",
            });
        }
        if !(q > 0.0) {
            return Err(Error::Domain {
                what: "q",
                value: q,
                domain: "(0, inf)",
            });
        }
        Ok(ReparamPoint { p, q })
    }

    /// Alignment ratio `s = q / r(p)`.
    pub fn s(&self, rfn: &RFunction) -> f64 {
        self.q / rfn.eval(self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Two-layer linear network with a scalar loss.
    Linear,
    /// Single neuron `φ(x)·y` with the squared loss.
    Nonlinear,
}

impl Family {
    /// Order `k` of the leading correction in η.
    pub fn order(self) -> i32 {
        match self {
            Family::Linear => 2,
            Family::Nonlinear => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub point: ReparamPoint,
    pub s: f64,
    pub loss: f64,
    pub sharpness: Option<f64>,
    pub lambda_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// The stop criteria held for the required number of consecutive steps.
    Converged,
    /// `q` rose above the requested threshold.
    QAbove,
    MaxSteps,
}

/// Monitor for the hypothesis that `p ≠ 0` while `q < 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VanishingMonitor {
    pub first_step: Option<usize>,
    pub count: usize,
}

impl VanishingMonitor {
    pub fn observe(&mut self, t: usize, point: &ReparamPoint) {
        if point.q < 1.0 && point.p.abs() < VANISHING_P {
            self.first_step.get_or_insert(t);
            self.count += 1;
        }
    }

    pub fn triggered(&self) -> bool {
        self.count > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub eta: f64,
    pub model_tag: String,
    pub termination: Termination,
    pub monitor: VanishingMonitor,
}

impl Trajectory {
    pub fn empty(eta: f64, model_tag: impl Into<String>) -> Self {
        Trajectory {
            steps: Vec::new(),
            eta,
            model_tag: model_tag.into(),
            termination: Termination::MaxSteps,
            monitor: VanishingMonitor::default(),
        }
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn initial(&self) -> Option<&StepRecord> {
        self.steps.first()
    }

    pub fn ps(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.point.p).collect()
    }

    pub fn qs(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.point.q).collect()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// `f_q(p) = p(1 − 2r(p)/q)`.
pub fn map_fq(rfn: &RFunction, q: f64, p: f64) -> f64 {
    p * (1.0 - 2.0 * rfn.eval(p) / q)
}

/// `f_q'(p) = 1 − 2(r(p) + p r'(p))/q`.
pub fn map_fq_derivative(rfn: &RFunction, q: f64, p: f64) -> f64 {
    1.0 - 2.0 * (rfn.eval(p) + p * rfn.d1(p)) / q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPointClass {
    StableFixedPoint,
    UnstableWithStablePeriod2,
    UnstableOther,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub class: FixedPointClass,
    /// `|f_q'(0)| = |1 − 2/q|`.
    pub fixed_point_multiplier: f64,
    /// `|1 + 2 r̂(q) r'(r̂(q))/q|` when `q < 1` and `r̂(q)` exists.
    pub period2_multiplier: Option<f64>,
    /// Threshold `c = r(p*)`; zero when `z r'/r > −1` everywhere.
    pub c: f64,
}

/// `c = r(p*)` with `p* = sup{p : z r'(z)/r(z) > −1 on |z| ≤ p}`.
pub fn period2_threshold(rfn: &RFunction) -> f64 {
    match rfn.elasticity_crossing(-1.0) {
        Some(p_star) => rfn.eval(p_star),
        None => 0.0,
    }
}

/// Stability of the fixed point `p = 0` of `f_q` and of the period-2 orbit `±r̂(q)`.
///
/// `q = 1` is neutral (`|f_q'(0)| = 1`) and reported as unstable-other.
pub fn classify_fixed_point(rfn: &RFunction, q: f64) -> Result<FixedPointReport> {
    if !(q > 0.0) {
        return Err(Error::Domain {
            what: "q",
            value: q,
            domain: "(0, inf)",
        });
    }
    let fixed_point_multiplier = (1.0 - 2.0 / q).abs();
    let c = period2_threshold(rfn);
    if q > 1.0 {
        return Ok(FixedPointReport {
            class: FixedPointClass::StableFixedPoint,
            fixed_point_multiplier,
            period2_multiplier: None,
            c,
        });
    }
    let period2_multiplier = if q < 1.0 {
        rfn.inverse(q)
            .ok()
            .map(|p| (1.0 + 2.0 * p * rfn.d1(p) / q).abs())
    } else {
        None
    };
    let class = match period2_multiplier {
        Some(m) if m < 1.0 && q > c => FixedPointClass::UnstableWithStablePeriod2,
        _ => FixedPointClass::UnstableOther,
    };
    Ok(FixedPointReport {
        class,
        fixed_point_multiplier,
        period2_multiplier,
        c,
    })
}

fn divergence(reason: impl Into<String>) -> Error {
    Error::Divergence {
        step: 0,
        reason: reason.into(),
    }
}

/// One exact GD step of the two-layer linear family in `(p, q)`.
pub fn step_linear(rfn: &RFunction, state: ReparamPoint, eta: f64) -> Result<ReparamPoint> {
    let ReparamPoint { p, q } = state;
    let r = rfn.eval(p);
    let e2p2 = eta * eta * p * p;
    let p_next = (1.0 - 2.0 * r / q + e2p2 * r * r) * p;
    let denom = 1.0 - e2p2 * r * (2.0 * q - r);
    if !(denom > 0.0) {
        return Err(divergence(format!("q-update denominator {denom:e} <= 0")));
    }
    let q_next = q / denom;
    if !p_next.is_finite() || !q_next.is_finite() {
        return Err(divergence("non-finite state"));
    }
    Ok(ReparamPoint {
        p: p_next,
        q: q_next,
    })
}

/// One exact GD step of the single-neuron family in `(p, q)`.
pub fn step_nonlinear(
    rfn: &RFunction,
    phi: Activation,
    state: ReparamPoint,
    eta: f64,
) -> Result<ReparamPoint> {
    let ReparamPoint { p, q } = state;
    let f = phi.eval(p);
    let shrink = 1.0 - eta * f * f;
    if !(shrink > 0.0) {
        return Err(divergence(format!("eta*phi(p)^2 = {:e} >= 1", eta * f * f)));
    }
    let p_next = (1.0 - 2.0 * rfn.eval(p) / q) * p;
    let q_next = q / (shrink * shrink);
    if !p_next.is_finite() || !q_next.is_finite() {
        return Err(divergence("non-finite state"));
    }
    Ok(ReparamPoint {
        p: p_next,
        q: q_next,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyModel {
    /// `log cosh(xy)`
    #[serde(rename = "logcosh-xy")]
    LogcoshXy,
    /// `½(tanh(x) y)²`
    #[serde(rename = "sq-tanh")]
    SqTanh,
    /// `½(ELU(x) y)²`
    #[serde(rename = "sq-elu")]
    SqElu,
}

impl ToyModel {
    pub fn name(self) -> &'static str {
        match self {
            ToyModel::LogcoshXy => "logcosh-xy",
            ToyModel::SqTanh => "sq-tanh",
            ToyModel::SqElu => "sq-elu",
        }
    }

    pub fn family(self) -> Family {
        match self {
            ToyModel::LogcoshXy => Family::Linear,
            _ => Family::Nonlinear,
        }
    }

    pub fn activation(self) -> Option<Activation> {
        match self {
            ToyModel::LogcoshXy => None,
            ToyModel::SqTanh => Some(Activation::Tanh),
            ToyModel::SqElu => Some(Activation::Elu),
        }
    }

    pub fn rfn(self) -> RFunction {
        match self.activation() {
            None => RFunction::from_loss(ScalarLoss::LogCosh),
            Some(a) => RFunction::from_activation(a),
        }
    }

    pub fn loss(self, x: f64, y: f64) -> f64 {
        match self.activation() {
            None => ScalarLoss::LogCosh.eval(x * y),
            Some(a) => {
                let f = a.eval(x) * y;
                0.5 * f * f
            }
        }
    }

    pub fn gradient(self, x: f64, y: f64) -> (f64, f64) {
        match self.activation() {
            None => {
                let t = (x * y).tanh();
                (t * y, t * x)
            }
            Some(a) => {
                let f = a.eval(x);
                (f * a.d1(x) * y * y, f * f * y)
            }
        }
    }

    /// Entries `(h_xx, h_xy, h_yy)` of the exact Hessian.
    pub fn hessian(self, x: f64, y: f64) -> (f64, f64, f64) {
        match self.activation() {
            None => {
                let l = ScalarLoss::LogCosh;
                let (l1, l2) = (l.d1(x * y), l.d2(x * y));
                (l2 * y * y, l2 * x * y + l1, l2 * x * x)
            }
            Some(a) => {
                let (f, f1, f2) = (a.eval(x), a.d1(x), a.d2(x));
                ((f * f2 + f1 * f1) * y * y, 2.0 * f * f1 * y, f * f)
            }
        }
    }

    pub fn sharpness(self, x: f64, y: f64) -> f64 {
        let (a, b, c) = self.hessian(x, y);
        sym2_lambda_max(a, b, c)
    }

    /// The canonical `(p, q)` of a toy state.
    pub fn reparam(self, x: f64, y: f64, eta: f64) -> ReparamPoint {
        match self {
            ToyModel::LogcoshXy => ReparamPoint {
                p: x * y,
                q: 2.0 / (eta * (x * x + y * y)),
            },
            _ => ReparamPoint {
                p: x,
                q: 2.0 / (eta * y * y),
            },
        }
    }

    /// A toy state `(x, y)` with canonical coordinates `point`, taking `x ≥ |y|`
    /// for the bilinear model and `y > 0` for the neurons.
    pub fn from_reparam(self, point: ReparamPoint, eta: f64) -> Result<(f64, f64)> {
        if !(eta > 0.0) {
            return Err(Error::Domain {
                what: "eta",
                value: eta,
                domain: "(0, inf)",
            });
        }
        let ReparamPoint { p, q } = ReparamPoint::new(point.p, point.q)?;
        let s = 2.0 / (eta * q);
        match self {
            ToyModel::LogcoshXy => {
                // x² + y² = s with xy = p needs s ≥ 2|p|
                if s < 2.0 * p.abs() {
                    return Err(Error::Domain {
                        what: "q",
                        value: q,
                        domain: "(0, 1/(eta |p|)]",
                    });
                }
                let x = ((s + (s * s - 4.0 * p * p).sqrt()) / 2.0).sqrt();
                Ok((x, p / x))
            }
            _ => Ok((p, s.sqrt())),
        }
    }
}

/// Largest eigenvalue of `[[a, b], [b, c]]`.
pub fn sym2_lambda_max(a: f64, b: f64, c: f64) -> f64 {
    0.5 * (a + c) + (0.5 * (a - c)).hypot(b)
}

/// One simultaneous gradient step on a toy objective.
pub fn toy_gd_step(model: ToyModel, x: f64, y: f64, eta: f64) -> (f64, f64) {
    let (gx, gy) = model.gradient(x, y);
    (x - eta * gx, y - eta * gy)
}

/// A 2-D dynamical system on `(p, q)`.
pub trait Stepper: Sync {
    fn step(&self, state: ReparamPoint, eta: f64) -> Result<ReparamPoint>;
    fn rfn(&self) -> RFunction;
    fn loss(&self, state: ReparamPoint, eta: f64) -> f64;
    fn sharpness(&self, _state: ReparamPoint, _eta: f64) -> Option<f64> {
        None
    }
    fn tag(&self) -> String;
}

/// [`step_linear`] with loss `ℓ(p)` (target zero).
#[derive(Debug, Clone, Copy)]
pub struct LinearRecursion {
    pub loss: ScalarLoss,
}

impl Stepper for LinearRecursion {
    fn step(&self, state: ReparamPoint, eta: f64) -> Result<ReparamPoint> {
        step_linear(&self.rfn(), state, eta)
    }

    fn rfn(&self) -> RFunction {
        RFunction::from_loss(self.loss)
    }

    fn loss(&self, state: ReparamPoint, _eta: f64) -> f64 {
        self.loss.eval(state.p)
    }

    fn tag(&self) -> String {
        format!("linear-recursion:{}", self.loss.name())
    }
}

/// [`step_nonlinear`]; sharpness from the equivalent toy state.
#[derive(Debug, Clone, Copy)]
pub struct NonlinearRecursion {
    pub activation: Activation,
}

impl NonlinearRecursion {
    fn toy_y(state: ReparamPoint, eta: f64) -> f64 {
        (2.0 / (eta * state.q)).sqrt()
    }
}

impl Stepper for NonlinearRecursion {
    fn step(&self, state: ReparamPoint, eta: f64) -> Result<ReparamPoint> {
        step_nonlinear(&self.rfn(), self.activation, state, eta)
    }

    fn rfn(&self) -> RFunction {
        RFunction::from_activation(self.activation)
    }

    fn loss(&self, state: ReparamPoint, eta: f64) -> f64 {
        let f = self.activation.eval(state.p);
        f * f / (eta * state.q)
    }

    fn sharpness(&self, state: ReparamPoint, eta: f64) -> Option<f64> {
        let y = Self::toy_y(state, eta);
        let a = self.activation;
        let (f, f1, f2) = (a.eval(state.p), a.d1(state.p), a.d2(state.p));
        Some(sym2_lambda_max(
            (f * f2 + f1 * f1) * y * y,
            2.0 * f * f1 * y,
            f * f,
        ))
    }

    fn tag(&self) -> String {
        format!("nonlinear-recursion:{}", self.activation.name())
    }
}

/// The pure map `f_q` with `q` held fixed.
#[derive(Debug, Clone, Copy)]
pub struct PureMap {
    pub rfn: RFunction,
}

impl Stepper for PureMap {
    fn step(&self, state: ReparamPoint, _eta: f64) -> Result<ReparamPoint> {
        Ok(ReparamPoint {
            p: map_fq(&self.rfn, state.q, state.p),
            q: state.q,
        })
    }

    fn rfn(&self) -> RFunction {
        self.rfn
    }

    fn loss(&self, state: ReparamPoint, _eta: f64) -> f64 {
        match self.rfn.loss() {
            Some(l) => l.eval(state.p),
            None => 0.5 * state.p * state.p,
        }
    }

    fn tag(&self) -> String {
        format!("map:{}", self.rfn.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub p_tol: f64,
    pub q_tol: f64,
    /// Consecutive steps the tolerances must hold.
    pub calm_steps: usize,
    /// Stop as soon as `q` exceeds this value.
    pub q_above: Option<f64>,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria {
            p_tol: 1e-12,
            q_tol: 1e-14,
            calm_steps: 10,
            q_above: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    /// Record sharpness every this many steps (0 disables).
    pub sharpness_every: usize,
    /// Record `λ̃(q_t)` alongside sharpness samples.
    pub lambda_tilde: bool,
}

impl Default for Recording {
    fn default() -> Self {
        Recording {
            sharpness_every: 1,
            lambda_tilde: false,
        }
    }
}

impl Recording {
    pub fn samples(&self, t: usize) -> bool {
        self.sharpness_every > 0 && t.is_multiple_of(self.sharpness_every)
    }
}

fn annotate(err: Error, t: usize) -> Error {
    match err {
        Error::Divergence { reason, .. } => Error::Divergence { step: t, reason },
        other => other,
    }
}

/// Shared driver for the recursion and toy simulators.
struct Driver<'a> {
    rfn: RFunction,
    eta: f64,
    stop: &'a StopCriteria,
    record: Recording,
    traj: Trajectory,
    calm: usize,
}

impl Driver<'_> {
    fn push(&mut self, t: usize, point: ReparamPoint, loss: f64, sharp: impl FnOnce() -> Option<f64>) {
        let sampled = self.record.samples(t);
        let sharpness = if sampled { sharp() } else { None };
        let lambda_tilde = if sampled && self.record.lambda_tilde && self.rfn.is_conforming() {
            crate::theory::lambda_tilde(&self.rfn, point.q, self.eta).ok()
        } else {
            None
        };
        self.traj.monitor.observe(t, &point);
        self.traj.steps.push(StepRecord {
            t,
            point,
            s: point.s(&self.rfn),
            loss,
            sharpness,
            lambda_tilde,
        });
    }

    /// Updates the stop state after a step from `prev` to `next`.
    fn should_stop(&mut self, prev: ReparamPoint, next: ReparamPoint) -> bool {
        if let Some(limit) = self.stop.q_above {
            if next.q > limit {
                self.traj.termination = Termination::QAbove;
                return true;
            }
        }
        if next.p.abs() < self.stop.p_tol && (next.q - prev.q).abs() < self.stop.q_tol {
            self.calm += 1;
        } else {
            self.calm = 0;
        }
        if self.calm >= self.stop.calm_steps {
            self.traj.termination = Termination::Converged;
            return true;
        }
        false
    }
}

/// Iterates `stepper` from `state0`, recording `t = 0` and every step after it.
pub fn simulate(
    stepper: &dyn Stepper,
    state0: ReparamPoint,
    eta: f64,
    max_steps: usize,
    stop: &StopCriteria,
) -> Result<Trajectory> {
    simulate_with(stepper, state0, eta, max_steps, stop, Recording::default())
}

pub fn simulate_with(
    stepper: &dyn Stepper,
    state0: ReparamPoint,
    eta: f64,
    max_steps: usize,
    stop: &StopCriteria,
    record: Recording,
) -> Result<Trajectory> {
    check_run(eta, max_steps)?;
    let mut d = Driver {
        rfn: stepper.rfn(),
        eta,
        stop,
        record,
        traj: Trajectory::empty(eta, stepper.tag()),
        calm: 0,
    };
    let mut state = state0;
    d.push(0, state, stepper.loss(state, eta), || stepper.sharpness(state, eta));
    for t in 1..=max_steps {
        let next = stepper.step(state, eta).map_err(|e| annotate(e, t))?;
        d.push(t, next, stepper.loss(next, eta), || stepper.sharpness(next, eta));
        let done = d.should_stop(state, next);
        state = next;
        if done {
            break;
        }
    }
    Ok(d.traj)
}

/// Runs GD on a toy objective in `(x, y)` and records its canonical `(p, q)`
/// together with the exact loss and sharpness.
pub fn simulate_toy(
    model: ToyModel,
    x0: f64,
    y0: f64,
    eta: f64,
    max_steps: usize,
    stop: &StopCriteria,
    record: Recording,
) -> Result<Trajectory> {
    check_run(eta, max_steps)?;
    let mut d = Driver {
        rfn: model.rfn(),
        eta,
        stop,
        record,
        traj: Trajectory::empty(eta, format!("toy:{}", model.name())),
        calm: 0,
    };
    let (mut x, mut y) = (x0, y0);
    let mut point = model.reparam(x, y, eta);
    d.push(0, point, model.loss(x, y), || Some(model.sharpness(x, y)));
    for t in 1..=max_steps {
        let (nx, ny) = toy_gd_step(model, x, y, eta);
        if !nx.is_finite() || !ny.is_finite() {
            return Err(Error::Divergence {
                step: t,
                reason: "non-finite parameters".into(),
            });
        }
        (x, y) = (nx, ny);
        let next = model.reparam(x, y, eta);
        d.push(t, next, model.loss(x, y), || Some(model.sharpness(x, y)));
        let done = d.should_stop(point, next);
        point = next;
        if done {
            break;
        }
    }
    Ok(d.traj)
}

fn check_run(eta: f64, max_steps: usize) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Domain {
            what: "eta",
            value: eta,
            domain: "[0, inf)",
        });
    }
    if max_steps == 0 {
        return Err(Error::Domain {
            what: "max_steps",
            value: 0.0,
            domain: ">= 1",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Period {
    Periodic(usize),
    Aperiodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    pub period: Period,
    /// The last full cycle of the tail; empty when aperiodic.
    pub points: Vec<f64>,
    /// `∏|f_q'|` over the cycle, when the map is supplied.
    pub multiplier: Option<f64>,
}

/// Smallest period `k ≤ 64` of the tail within absolute tolerance `tol`.
pub fn detect_period(tail: &[f64], tol: f64, map: Option<(&RFunction, f64)>) -> OrbitReport {
    detect_period_bounded(tail, tol, DEFAULT_MAX_PERIOD, map)
}

/// [`detect_period`] with an explicit bound; the bound is clamped to `len/4`.
pub fn detect_period_bounded(
    tail: &[f64],
    tol: f64,
    max_period: usize,
    map: Option<(&RFunction, f64)>,
) -> OrbitReport {
    let max_k = max_period.min(tail.len() / 4);
    let found = (1..=max_k).find(|&k| {
        tail.iter()
            .zip(&tail[k..])
            .all(|(a, b)| (b - a).abs() <= tol)
    });
    match found {
        Some(k) => {
            let points = tail[tail.len() - k..].to_vec();
            let multiplier = map.map(|(rfn, q)| {
                points
                    .iter()
                    .map(|&p| map_fq_derivative(rfn, q, p).abs())
                    .product()
            });
            OrbitReport {
                period: Period::Periodic(k),
                points,
                multiplier,
            }
        }
        None => OrbitReport {
            period: Period::Aperiodic,
            points: Vec::new(),
            multiplier: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationDiagram {
    pub q_grid: Vec<f64>,
    pub attractor_samples: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub samples_per_q: usize,
}

/// Iterates `f_q` from `p0` for `burn_in + samples` steps at one `q`,
/// returning the final `samples` iterates.
pub fn attractor_samples(rfn: &RFunction, q: f64, burn_in: usize, samples: usize, p0: f64) -> Vec<f64> {
    let mut p = p0;
    for _ in 0..burn_in {
        p = map_fq(rfn, q, p);
    }
    (0..samples)
        .map(|_| {
            p = map_fq(rfn, q, p);
            p
        })
        .collect()
}

/// Attractor samples of `f_q` over an ascending `q` grid.
///
/// Grid points are evaluated in parallel on the current rayon pool; the
/// output order is the grid order.
pub fn sweep_bifurcation(
    rfn: &RFunction,
    q_grid: &[f64],
    burn_in: usize,
    samples: usize,
    p0: f64,
) -> Result<BifurcationDiagram> {
    if q_grid.is_empty() {
        return Err(Error::Shape("empty q grid".into()));
    }
    if let Some(&bad) = q_grid.iter().find(|&&q| !(q > 0.0)) {
        return Err(Error::Domain {
            what: "q",
            value: bad,
            domain: "(0, inf)",
        });
    }
    if q_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Shape("q grid must be strictly ascending".into()));
    }
    if samples == 0 {
        return Err(Error::Domain {
            what: "samples",
            value: 0.0,
            domain: ">= 1",
        });
    }
    let attractor_samples = q_grid
        .par_iter()
        .map(|&q| attractor_samples(rfn, q, burn_in, samples, p0))
        .collect();
    Ok(BifurcationDiagram {
        q_grid: q_grid.to_vec(),
        attractor_samples,
        burn_in,
        samples_per_q: samples,
    })
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lc() -> RFunction {
        RFunction::from_loss(ScalarLoss::LogCosh)
    }

    fn tanh() -> RFunction {
        RFunction::from_activation(Activation::Tanh)
    }

    #[test]
    fn zero_is_fixed() {
        assert_eq!(map_fq(&lc(), 0.7, 0.0), 0.0);
        let s = step_linear(&lc(), ReparamPoint { p: 0.0, q: 0.9 }, 0.01).unwrap();
        assert_eq!(s, ReparamPoint { p: 0.0, q: 0.9 });
        let s = step_nonlinear(&tanh(), Activation::Tanh, ReparamPoint { p: 0.0, q: 0.5 }, 0.005)
            .unwrap();
        assert_eq!(s, ReparamPoint { p: 0.0, q: 0.5 });
    }

    #[test]
    fn zero_eta_is_the_map() {
        let st = ReparamPoint { p: 1.0, q: 0.9 };
        let a = step_linear(&lc(), st, 0.0).unwrap();
        assert_eq!(a.p, map_fq(&lc(), 0.9, 1.0));
        assert_eq!(a.q, 0.9);
        let b = step_nonlinear(&tanh(), Activation::Tanh, st, 0.0).unwrap();
        assert_eq!(b.p, map_fq(&tanh(), 0.9, 1.0));
        assert_eq!(b.q, 0.9);
    }

    #[test]
    fn classification() {
        let fp = classify_fixed_point(&lc(), 1.5).unwrap();
        assert_eq!(fp.class, FixedPointClass::StableFixedPoint);
        let p2 = classify_fixed_point(&lc(), 0.9).unwrap();
        assert_eq!(p2.class, FixedPointClass::UnstableWithStablePeriod2);
        assert_eq!(p2.c, 0.0);
        let neutral = classify_fixed_point(&lc(), 1.0).unwrap();
        assert_eq!(neutral.class, FixedPointClass::UnstableOther);
        assert_eq!(neutral.fixed_point_multiplier, 1.0);
        assert!(classify_fixed_point(&lc(), 0.0).is_err());
        assert!(classify_fixed_point(&lc(), -1.0).is_err());
    }

    #[test]
    fn divergence_is_an_error() {
        let err = step_linear(&lc(), ReparamPoint { p: 5.0, q: 3.0 }, 2.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        let err = step_nonlinear(&tanh(), Activation::Tanh, ReparamPoint { p: 5.0, q: 1.0 }, 1.5)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        let lin = LinearRecursion {
            loss: ScalarLoss::LogCosh,
        };
        let err = simulate(&lin, ReparamPoint { p: 5.0, q: 3.0 }, 2.0, 10, &StopCriteria::default())
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }));
    }

    #[test]
    fn constant_trajectory_stops_early() {
        let lin = LinearRecursion {
            loss: ScalarLoss::LogCosh,
        };
        let traj = simulate(&lin, ReparamPoint { p: 0.0, q: 2.0 }, 0.01, 100, &StopCriteria::default())
            .unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        assert_eq!(traj.steps.len(), 11);
        assert!(traj.steps.iter().all(|r| r.point == ReparamPoint { p: 0.0, q: 2.0 }));
        assert!(traj.steps.iter().enumerate().all(|(i, r)| r.t == i));
    }

    #[test]
    fn vanishing_p_monitor() {
        let map = PureMap { rfn: lc() };
        let traj = simulate(&map, ReparamPoint { p: 0.0, q: 0.9 }, 0.01, 20, &StopCriteria::default())
            .unwrap();
        assert!(traj.monitor.triggered());
        assert_eq!(traj.monitor.first_step, Some(0));
    }

    #[test]
    fn toy_gradients_match_finite_differences() {
        for model in [ToyModel::LogcoshXy, ToyModel::SqTanh, ToyModel::SqElu] {
            for &(x, y) in &[(0.7, 3.1), (-0.3, 1.0), (0.5, 2.0), (1.3, -0.4)] {
                let h = 1e-6;
                let gx = (model.loss(x + h, y) - model.loss(x - h, y)) / (2.0 * h);
                let gy = (model.loss(x, y + h) - model.loss(x, y - h)) / (2.0 * h);
                let (ax, ay) = model.gradient(x, y);
                assert!((gx - ax).abs() <= 1e-7 * (1.0 + ax.abs()), "{model:?}");
                assert!((gy - ay).abs() <= 1e-7 * (1.0 + ay.abs()), "{model:?}");
            }
        }
    }

    #[test]
    fn toy_minimum_is_fixed() {
        assert_eq!(toy_gd_step(ToyModel::LogcoshXy, 0.0, 3.0, 0.08), (0.0, 3.0));
    }

    #[test]
    fn toy_sharpness_at_origin() {
        // Hessian of ½(φ(x)y)² at x = 0 is diag(y², 0)
        assert_eq!(ToyModel::SqTanh.sharpness(0.0, 3.0), 9.0);
    }

    #[test]
    fn toy_state_from_reparam() {
        let eta = 0.08;
        for model in [ToyModel::LogcoshXy, ToyModel::SqTanh, ToyModel::SqElu] {
            let want = ReparamPoint { p: 0.7, q: 0.9 };
            let (x, y) = model.from_reparam(want, eta).unwrap();
            let got = model.reparam(x, y, eta);
            assert!((got.p - want.p).abs() <= 1e-15 && (got.q - want.q).abs() <= 1e-15, "{model:?}");
        }
        assert!(ToyModel::LogcoshXy.from_reparam(ReparamPoint { p: 100.0, q: 0.9 }, eta).is_err());
        assert!(ToyModel::SqTanh.from_reparam(ReparamPoint { p: 1.0, q: -1.0 }, eta).is_err());
    }

    #[test]
    fn period_of_zeros() {
        let r = detect_period(&[0.0; 256], 1e-9, None);
        assert_eq!(r.period, Period::Periodic(1));
        assert_eq!(r.points, vec![0.0]);
    }

    #[test]
    fn period_two_of_log_cosh_map() {
        let q = 0.9;
        let tail = attractor_samples(&lc(), q, 10_000, 256, DEFAULT_P0);
        let report = detect_period(&tail, DEFAULT_PERIOD_TOL, Some((&lc(), q)));
        assert_eq!(report.period, Period::Periodic(2));
        let rh = lc().inverse(q).unwrap();
        for p in &report.points {
            assert!((p.abs() - rh).abs() < 1e-8);
        }
        assert!(report.points[0] * report.points[1] < 0.0);
        assert!(report.multiplier.unwrap() < 1.0);
    }

    #[test]
    fn short_tail_is_aperiodic() {
        let r = detect_period(&[0.1, 0.2, 0.3], 1e-9, None);
        assert_eq!(r.period, Period::Aperiodic);
    }

    #[test]
    fn sweep_validates_grid() {
        assert!(sweep_bifurcation(&lc(), &[], 1, 1, 0.5).is_err());
        assert!(sweep_bifurcation(&lc(), &[0.5, 0.4], 1, 1, 0.5).is_err());
        assert!(sweep_bifurcation(&lc(), &[0.0, 0.4], 1, 1, 0.5).is_err());
        assert!(sweep_bifurcation(&lc(), &[0.5], 1, 0, 0.5).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.3, 1.5, 481);
        assert_eq!(g.len(), 481);
        assert_eq!(g[0], 0.3);
        assert_eq!(g[480], 1.5);
        assert!((g[240] - 0.9).abs() < 1e-15);
    }
}
