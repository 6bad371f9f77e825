//! Canonical and generalized reparameterizations of live network state, and
//! trajectory extraction from full parameter-space gradient descent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ReparamPoint, StepRecord, Termination, Trajectory};
use crate::error::{Error, Result};
use crate::network::{
    gd_step, gram_spectral_norm, loss_and_grad, output_and_grad, sharpness, DataBatch, MlpParams,
    PowerIterConfig,
};
use crate::scalar_models::{RFunction, ScalarLoss};
use crate::theory::lambda_tilde;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    #[default]
    Mean,
    L1,
    L2,
    Linf,
}

impl Aggregator {
    pub fn apply(self, z: &DVector<f64>) -> f64 {
        match self {
            Aggregator::Mean => z.sum() / z.len() as f64,
            Aggregator::L1 => z.lp_norm(1),
            Aggregator::L2 => z.norm(),
            Aggregator::Linf => z.amax(),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "eta",
            value: eta,
            domain: "(0, inf)",
        })
    }
}

/// `(f(x) − y, 2/(η‖∇_Θ f(x)‖²))`.
pub fn canonical(params: &MlpParams, x: &DVector<f64>, y: f64, eta: f64) -> Result<ReparamPoint> {
    check_eta(eta)?;
    let (f, grad) = output_and_grad(params, x)?;
    let g2 = grad.norm_squared();
    if g2 == 0.0 {
        return Err(Error::DegenerateReparam);
    }
    Ok(ReparamPoint {
        p: f - y,
        q: 2.0 / (eta * g2),
    })
}

/// `(P(f(X) − y), 2n/(η λ_max(G)))` with `G` the Gram matrix of per-sample gradients.
pub fn generalized(params: &MlpParams, batch: &DataBatch, eta: f64, agg: Aggregator) -> Result<ReparamPoint> {
    check_eta(eta)?;
    let n = batch.len();
    let mut res = DVector::zeros(n);
    for i in 0..n {
        res[i] = crate::network::forward(params, &batch.input(i))? - batch.targets[i];
    }
    let lam = gram_spectral_norm(params, batch)?;
    if lam == 0.0 {
        return Err(Error::DegenerateReparam);
    }
    Ok(ReparamPoint {
        p: agg.apply(&res),
        q: 2.0 * n as f64 / (eta * lam),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub params0: MlpParams,
    pub batch: DataBatch,
    pub loss: ScalarLoss,
    pub eta: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReparamSpec {
    pub aggregator: Aggregator,
    /// Sharpness (and `λ̃`) recorded every this many steps; 0 disables.
    pub sharpness_every: usize,
    pub power: PowerIterConfig,
}

impl Default for ReparamSpec {
    fn default() -> Self {
        ReparamSpec {
            aggregator: Aggregator::Mean,
            sharpness_every: 1,
            power: PowerIterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRun {
    pub trajectory: Trajectory,
    pub final_params: MlpParams,
    /// Number of sharpness estimates that hit `max_iters` without settling.
    pub unconverged_sharpness: usize,
}

/// Runs `steps` GD steps and records `t = 0, …, steps`.
pub fn extract_run(run: &TrainingRun, spec: &ReparamSpec) -> Result<ExtractedRun> {
    check_eta(run.eta)?;
    let rfn = RFunction::from_loss(run.loss);
    let objective = run.loss.into();
    let mut traj = Trajectory::empty(
        run.eta,
        format!(
            "network:L{}:{}:{}",
            run.params0.depth(),
            run.params0.activation.name(),
            run.loss.name()
        ),
    );
    let mut params = run.params0.clone();
    let mut unconverged = 0;
    for t in 0..=run.steps {
        if t > 0 {
            params = gd_step(&params, &run.batch, objective, run.eta)?;
        }
        let (loss, _) = loss_and_grad(&params, &run.batch, objective)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: t,
                reason: "non-finite loss".into(),
            });
        }
        let point = generalized(&params, &run.batch, run.eta, spec.aggregator)?;
        let sampled = spec.sharpness_every > 0 && t % spec.sharpness_every == 0;
        let (sharp, lt) = if sampled {
            let est = sharpness(&params, &run.batch, objective, &spec.power)?;
            if !est.converged {
                unconverged += 1;
            }
            (Some(est.value), lambda_tilde(&rfn, point.q, run.eta).ok())
        } else {
            (None, None)
        };
        traj.monitor.observe(t, &point);
        traj.steps.push(StepRecord {
            t,
            point,
            s: point.s(&rfn),
            loss,
            sharpness: sharp,
            lambda_tilde: lt,
        });
    }
    traj.termination = Termination::MaxSteps;
    Ok(ExtractedRun {
        trajectory: traj,
        final_params: params,
        unconverged_sharpness: unconverged,
    })
}

pub fn extract_trajectory(run: &TrainingRun, spec: &ReparamSpec) -> Result<Trajectory> {
    extract_run(run, spec).map(|r| r.trajectory)
}

/// Per-step `|q_t/r(p_t) − 1|`.
pub fn alignment_residual(traj: &Trajectory, rfn: &RFunction) -> Vec<f64> {
    traj.steps
        .iter()
        .map(|r| (r.point.s(rfn) - 1.0).abs())
        .collect()
}
