//! Scalar losses, activations and the bell-shaped ratio functions they induce.
//!
//! A loss ℓ induces `r(p) = ℓ'(p)/p`; an activation φ induces
//! `r(z) = φ(z)φ'(z)/z`. Both are written as `r(z) = g(z)/z` for an odd
//! numerator `g`, and every derivative of `r` is formed from `g, g', g''`.
//! Inside the band `|z| < NEAR_ZERO` the removable singularity is replaced by
//! the even Taylor expansion about zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the band around zero where ratio functions switch to series.
pub const NEAR_ZERO: f64 = 1e-4;

/// Upper end of the bracket searched by [`RFunction::inverse`].
pub const R_HAT_LIMIT: f64 = 1e3;

/// Point at which a conforming `r` must already be below [`TAIL_THRESHOLD`].
pub const TAIL_PROBE: f64 = 50.0;
pub const TAIL_THRESHOLD: f64 = 1e-3;

/// Validation grid: 2001 points on [-10, 10].
pub const GRID_POINTS: usize = 2001;
pub const GRID_HALF_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarLoss {
    LogCosh,
    SquareRoot,
}

impl ScalarLoss {
    pub fn eval(self, p: f64) -> f64 {
        match self {
            // log cosh p = |p| + log(1 + e^{-2|p|}) - log 2, stable for large |p|
            ScalarLoss::LogCosh => {
                let a = p.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            ScalarLoss::SquareRoot => p.hypot(1.0),
        }
    }

    pub fn d1(self, p: f64) -> f64 {
        match self {
            ScalarLoss::LogCosh => p.tanh(),
            ScalarLoss::SquareRoot => p / p.hypot(1.0),
        }
    }

    pub fn d2(self, p: f64) -> f64 {
        match self {
            ScalarLoss::LogCosh => sech2(p),
            ScalarLoss::SquareRoot => p.hypot(1.0).powi(-3),
        }
    }

    pub fn d3(self, p: f64) -> f64 {
        match self {
            ScalarLoss::LogCosh => -2.0 * sech2(p) * p.tanh(),
            ScalarLoss::SquareRoot => -3.0 * p * p.hypot(1.0).powi(-5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarLoss::LogCosh => "log-cosh",
            ScalarLoss::SquareRoot => "square-root",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Elu,
    Linear,
}

impl Activation {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Elu => {
                if z >= 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Linear => z,
        }
    }

    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => sech2(z),
            Activation::Elu => {
                if z >= 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * sech2(z) * z.tanh(),
            Activation::Elu => {
                if z >= 0.0 {
                    0.0
                } else {
                    z.exp()
                }
            }
            Activation::Linear => 0.0,
        }
    }

    pub fn d3(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s = sech2(z);
                -2.0 * s * s + 4.0 * t * t * s
            }
            Activation::Elu => {
                if z >= 0.0 {
                    0.0
                } else {
                    z.exp()
                }
            }
            Activation::Linear => 0.0,
        }
    }

    /// Only sigmoidal activations fall under the single-neuron theory.
    pub fn is_sigmoidal(self) -> bool {
        matches!(self, Activation::Tanh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Linear => "linear",
        }
    }
}

fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "from", content = "kind")]
pub enum RSource {
    Loss(ScalarLoss),
    Activation(Activation),
}

/// The ratio function `r` with its derivatives and inverse `r̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RFunction {
    pub source: RSource,
}

impl RFunction {
    pub fn from_loss(loss: ScalarLoss) -> Self {
        RFunction {
            source: RSource::Loss(loss),
        }
    }

    pub fn from_activation(act: Activation) -> Self {
        RFunction {
            source: RSource::Activation(act),
        }
    }

    pub fn loss(&self) -> Option<ScalarLoss> {
        match self.source {
            RSource::Loss(l) => Some(l),
            RSource::Activation(_) => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self.source {
            RSource::Activation(a) => Some(a),
            RSource::Loss(_) => None,
        }
    }

    pub fn name(&self) -> String {
        match self.source {
            RSource::Loss(l) => format!("loss:{}", l.name()),
            RSource::Activation(a) => format!("activation:{}", a.name()),
        }
    }

    /// The compiled-in kinds the theorems are stated for.
    pub fn is_conforming(&self) -> bool {
        match self.source {
            RSource::Loss(_) => true,
            RSource::Activation(a) => a.is_sigmoidal(),
        }
    }

    /// r″(0), stored analytically per kind.
    ///
    /// ELU is not twice differentiable at zero and yields NaN.
    pub fn r2_at_zero(&self) -> f64 {
        match self.source {
            RSource::Loss(ScalarLoss::LogCosh) => -2.0 / 3.0,
            RSource::Loss(ScalarLoss::SquareRoot) => -1.0,
            RSource::Activation(Activation::Tanh) => -8.0 / 3.0,
            RSource::Activation(Activation::Elu) => f64::NAN,
            RSource::Activation(Activation::Linear) => 0.0,
        }
    }

    /// r⁗(0); used by validators only.
    pub fn r4_at_zero(&self) -> f64 {
        match self.source {
            RSource::Loss(ScalarLoss::LogCosh) => 16.0 / 5.0,
            RSource::Loss(ScalarLoss::SquareRoot) => 9.0,
            RSource::Activation(Activation::Tanh) => 136.0 / 5.0,
            RSource::Activation(Activation::Elu) => f64::NAN,
            RSource::Activation(Activation::Linear) => 0.0,
        }
    }

    /// Odd numerator g(z) = z·r(z) and its first two derivatives.
    fn numerator(&self, z: f64) -> (f64, f64, f64) {
        match self.source {
            RSource::Loss(l) => (l.d1(z), l.d2(z), l.d3(z)),
            RSource::Activation(a) => {
                let (f, f1, f2, f3) = (a.eval(z), a.d1(z), a.d2(z), a.d3(z));
                (f * f1, f1 * f1 + f * f2, 3.0 * f1 * f2 + f * f3)
            }
        }
    }

    /// Series of r, r′, r″ inside the near-zero band.
    fn series(&self, z: f64) -> (f64, f64, f64) {
        match self.source {
            RSource::Activation(Activation::Linear) => (1.0, 0.0, 0.0),
            RSource::Activation(Activation::Elu) => {
                if z >= 0.0 {
                    (1.0, 0.0, 0.0)
                } else {
                    // (e^{2z} - e^z)/z = 1 + 3z/2 + 7z²/6 + 5z³/8 + ...
                    (
                        1.0 + z * (1.5 + z * (7.0 / 6.0 + z * 0.625)),
                        1.5 + z * (7.0 / 3.0 + z * 1.875),
                        7.0 / 3.0 + z * 3.75,
                    )
                }
            }
            _ => {
                let a = 0.5 * self.r2_at_zero();
                let b = self.r4_at_zero() / 24.0;
                let z2 = z * z;
                (
                    1.0 + z2 * (a + b * z2),
                    z * (2.0 * a + 4.0 * b * z2),
                    2.0 * a + 12.0 * b * z2,
                )
            }
        }
    }

    fn all(&self, z: f64) -> (f64, f64, f64) {
        if let RSource::Loss(ScalarLoss::SquareRoot) = self.source {
            // (1+z²)^{-1/2} has no singularity at zero
            let s = 1.0 / z.hypot(1.0);
            let s3 = s * s * s;
            return (s, -z * s3, (2.0 * z * z - 1.0) * s3 * s * s);
        }
        if z.abs() < NEAR_ZERO {
            return self.series(z);
        }
        self.direct(z)
    }

    /// r, r′, r″ from the numerator; loses accuracy as z approaches zero.
    fn direct(&self, z: f64) -> (f64, f64, f64) {
        let (g, g1, g2) = self.numerator(z);
        let r = g / z;
        let r1 = (g1 - r) / z;
        let r2 = (g2 - 2.0 * r1) / z;
        (r, r1, r2)
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.all(z).0
    }

    pub fn d1(&self, z: f64) -> f64 {
        self.all(z).1
    }

    pub fn d2(&self, z: f64) -> f64 {
        self.all(z).2
    }

    /// `1 + z r′(z)/r(z)`, evaluated as `z g′(z)/g(z)` so that it keeps full
    /// relative precision where it approaches zero.
    pub fn elasticity_plus_one(&self, z: f64) -> f64 {
        if z.abs() < NEAR_ZERO {
            let (r, r1, _) = self.series(z);
            return 1.0 + z * r1 / r;
        }
        if let RSource::Loss(ScalarLoss::SquareRoot) = self.source {
            return 1.0 / (1.0 + z * z);
        }
        let (g, g1, _) = self.numerator(z);
        z * g1 / g
    }

    /// `r̂(q)`: the unique `p ≥ 0` with `r(p) = q`, by bracketing and bisection.
    ///
    /// Bisection runs until the bracket cannot shrink further, which is well
    /// inside the required 1e-12 absolute tolerance.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        self.inverse_within(q, R_HAT_LIMIT)
    }

    /// [`RFunction::inverse`] with the bracket search extended to `limit`.
    pub fn inverse_within(&self, q: f64, limit: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Domain {
                what: "q",
                value: q,
                domain: "(0, 1]",
            });
        }
        if q == 1.0 {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while self.eval(hi) >= q {
            hi *= 2.0;
            if hi > limit {
                if self.eval(limit) >= q {
                    return Err(Error::NoRoot {
                        target: q,
                        limit,
                    });
                }
                hi = limit;
                break;
            }
        }
        let mut lo = 0.0;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) >= q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `sup{z ≥ 0 : z r′(z)/r(z) ≥ level}` for a level in (-∞, 0].
    ///
    /// Relies on `z r′/r` decreasing on `z > 0`. Returns `None` when the level
    /// is never crossed on `[0, TAIL_PROBE]`.
    pub fn elasticity_crossing(&self, level: f64) -> Option<f64> {
        let target = 1.0 + level;
        if self.elasticity_plus_one(TAIL_PROBE) >= target {
            return None;
        }
        let (mut lo, mut hi) = (0.0_f64, TAIL_PROBE);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.elasticity_plus_one(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Free-function form of [`RFunction::eval`].
pub fn r_eval(rfn: &RFunction, p: f64) -> f64 {
    rfn.eval(p)
}

/// Free-function form of [`RFunction::inverse`].
pub fn r_hat(rfn: &RFunction, q: f64) -> Result<f64> {
    rfn.inverse(q)
}

/// Phase-I correction for the two-layer linear family,
/// `h(p) = -(p r³/r′ + p² r²)/2`, with limit `-1/(2 r″(0))` at zero.
pub fn h_linear(rfn: &RFunction, p: f64) -> Result<f64> {
    if rfn.loss().is_none() {
        return Err(Error::NonConforming(format!(
            "{} (h_linear needs a loss-derived r)",
            rfn.name()
        )));
    }
    if p.abs() < NEAR_ZERO {
        return Ok(-0.5 / rfn.r2_at_zero());
    }
    let (r, r1, _) = rfn.all(p);
    Ok(-0.5 * (p * r * r * r / r1 + p * p * r * r))
}

/// Phase-I correction for the single-neuron family,
/// `h(p) = -φ(p)² r(p) / (p r′(p))`, with limit `-1/r″(0)` at zero.
pub fn h_nonlinear(rfn: &RFunction, p: f64) -> Result<f64> {
    let Some(act) = rfn.activation() else {
        return Err(Error::NonConforming(format!(
            "{} (h_nonlinear needs an activation-derived r)",
            rfn.name()
        )));
    };
    if p.abs() < NEAR_ZERO {
        return Ok(-1.0 / rfn.r2_at_zero());
    }
    let (r, r1, _) = rfn.all(p);
    let phi = act.eval(p);
    Ok(-phi * phi * r / (p * r1))
}

/// One grid check of [`validate_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub pass: bool,
    /// Largest observed violation; zero when the check passes.
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub rfn: RFunction,
    pub checks: Vec<ConditionCheck>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passes(&self, name: &str) -> bool {
        self.get(name).is_some_and(|c| c.pass)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const COND_R0: &str = "r(0)=1";
pub const COND_EVEN: &str = "r even";
pub const COND_BELL: &str = "r decreasing on p>0";
pub const COND_TAIL: &str = "r vanishes at infinity";
pub const COND_I: &str = "(i) r'/r^2 decreasing";
pub const COND_II: &str = "(ii) z r'/r decreasing on z>0, increasing on z<0";
pub const COND_III: &str = "(iii) z r/r' decreasing on z>0, increasing on z<0";
pub const COND_IV: &str = "(iv) rhat(1/2) r'(rhat(1/2)) > -1/2";
pub const COND_LOSS_EVEN: &str = "loss even";
pub const COND_LOSS_CONVEX: &str = "loss convex";
pub const COND_LOSS_LIPSCHITZ: &str = "loss 1-Lipschitz";
pub const COND_LOSS_CURVATURE: &str = "loss''(0)=1";
pub const COND_ODD: &str = "activation odd";
pub const COND_INCREASING: &str = "activation increasing";
pub const COND_ACT_LIPSCHITZ: &str = "activation 1-Lipschitz";
pub const COND_ACT_ORIGIN: &str = "phi(0)=0 and phi'(0)=1";
pub const COND_ACT_BOUNDED: &str = "|phi| < 1";

const MONOTONE_RTOL: f64 = 1e-9;
const EQUAL_ATOL: f64 = 1e-12;

pub fn validation_grid() -> Vec<f64> {
    let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|i| -GRID_HALF_WIDTH + step * i as f64)
        .collect()
}

struct Checker {
    checks: Vec<ConditionCheck>,
}

impl Checker {
    fn push(&mut self, name: &str, worst_violation: f64) {
        let pass = worst_violation == 0.0;
        self.checks.push(ConditionCheck {
            name: name.to_string(),
            pass,
            worst_violation,
        });
    }
}

/// Violation of "non-increasing along `values`"; non-finite entries count as infinite.
fn decreasing_violation(values: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for w in values.windows(2) {
        if !w[0].is_finite() || !w[1].is_finite() {
            return f64::INFINITY;
        }
        let slack = MONOTONE_RTOL * w[0].abs().max(w[1].abs()).max(1.0);
        let rise = w[1] - w[0];
        if rise > slack {
            worst = worst.max(rise);
        }
    }
    worst
}

fn max_violation(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0_f64, |acc, v| {
        if v.is_nan() {
            f64::INFINITY
        } else {
            acc.max(v.max(0.0))
        }
    })
}

/// Grid checks of the bell shape and the monotonicity conditions the
/// theorems assume, plus the loss or activation conditions for the source.
pub fn validate_assumptions(rfn: &RFunction) -> AssumptionReport {
    let grid = validation_grid();
    let positive: Vec<f64> = grid.iter().copied().filter(|&z| z > 0.0).collect();
    let negative: Vec<f64> = grid.iter().copied().filter(|&z| z < 0.0).collect();
    let mut c = Checker { checks: Vec::new() };

    c.push(COND_R0, (rfn.eval(0.0) - 1.0).abs());
    c.push(
        COND_EVEN,
        max_violation(
            positive
                .iter()
                .map(|&z| (rfn.eval(z) - rfn.eval(-z)).abs() - EQUAL_ATOL),
        ),
    );
    c.push(
        COND_BELL,
        max_violation(positive.iter().map(|&z| {
            let d = rfn.d1(z);
            if d < 0.0 {
                0.0
            } else {
                d.max(f64::MIN_POSITIVE)
            }
        })),
    );
    let tail = rfn.eval(TAIL_PROBE).max(rfn.eval(-TAIL_PROBE));
    let tail_violation = match rfn.source {
        RSource::Activation(_) => (tail - TAIL_THRESHOLD).max(0.0),
        // a 1-Lipschitz loss has r(p) ~ 1/|p|, so require that decay rate instead
        RSource::Loss(_) => {
            let far = rfn.eval(2.0 * TAIL_PROBE).max(rfn.eval(-2.0 * TAIL_PROBE));
            (far - (0.5 + 1e-3) * tail).max(0.0)
        }
    };
    c.push(COND_TAIL, tail_violation);

    let ratio_i: Vec<f64> = grid
        .iter()
        .map(|&z| {
            let r = rfn.eval(z);
            rfn.d1(z) / (r * r)
        })
        .collect();
    c.push(COND_I, decreasing_violation(&ratio_i));

    // z r'/r = (elasticity + 1) - 1; monotone in opposite senses on each side
    let on_sides = |f: &dyn Fn(f64) -> f64| {
        let right: Vec<f64> = positive.iter().map(|&z| f(z)).collect();
        let left_rev: Vec<f64> = negative.iter().rev().map(|&z| f(z)).collect();
        decreasing_violation(&right).max(decreasing_violation(&left_rev))
    };
    c.push(COND_II, on_sides(&|z| rfn.elasticity_plus_one(z) - 1.0));
    c.push(COND_III, on_sides(&|z| z * rfn.eval(z) / rfn.d1(z)));

    match rfn.source {
        RSource::Loss(loss) => {
            c.push(
                COND_LOSS_EVEN,
                max_violation(
                    positive
                        .iter()
                        .map(|&p| (loss.eval(p) - loss.eval(-p)).abs() - EQUAL_ATOL),
                ),
            );
            c.push(
                COND_LOSS_CONVEX,
                max_violation(grid.iter().map(|&p| -loss.d2(p))),
            );
            c.push(
                COND_LOSS_LIPSCHITZ,
                max_violation(grid.iter().map(|&p| loss.d1(p).abs() - 1.0)),
            );
            c.push(COND_LOSS_CURVATURE, (loss.d2(0.0) - 1.0).abs());
        }
        RSource::Activation(act) => {
            c.push(
                COND_ODD,
                max_violation(
                    positive
                        .iter()
                        .map(|&z| (act.eval(z) + act.eval(-z)).abs() - EQUAL_ATOL),
                ),
            );
            c.push(
                COND_INCREASING,
                max_violation(grid.iter().map(|&z| -act.d1(z))),
            );
            c.push(
                COND_ACT_LIPSCHITZ,
                max_violation(grid.iter().map(|&z| act.d1(z).abs() - 1.0)),
            );
            c.push(
                COND_ACT_ORIGIN,
                act.eval(0.0).abs() + (act.d1(0.0) - 1.0).abs(),
            );
            c.push(
                COND_ACT_BOUNDED,
                max_violation(
                    grid.iter()
                        .chain(std::iter::once(&TAIL_PROBE))
                        .map(|&z| {
                            let v = act.eval(z).abs();
                            if v < 1.0 {
                                0.0
                            } else {
                                v - 1.0 + f64::EPSILON
                            }
                        }),
                ),
            );
            // strict inequality: equality counts as a violation
            let iv = match rfn.inverse(0.5) {
                Ok(p) => {
                    let value = p * rfn.d1(p);
                    if value > -0.5 {
                        0.0
                    } else {
                        (-0.5 - value).max(f64::MIN_POSITIVE)
                    }
                }
                Err(_) => f64::INFINITY,
            };
            c.push(COND_IV, iv);
        }
    }

    AssumptionReport {
        rfn: *rfn,
        checks: c.checks,
    }
}
