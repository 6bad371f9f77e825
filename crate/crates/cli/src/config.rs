//! Experiment configuration: TOML sections per module, strict keys, presets
//! and the provenance hash.

use std::fmt;
use std::path::{Path, PathBuf};

use eoslab::dynamics::{StopCriteria, ToyModel, DEFAULT_BURN_IN, DEFAULT_P0, DEFAULT_SAMPLES};
use eoslab::theory::{EosOptions, LimitingQConfig, SharpeningConfig};
use eoslab::{Activation, Aggregator, PowerIterConfig, RFunction, ScalarLoss};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Invalid or unreadable configuration; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate2d,
    TrainNet,
    SweepBifurcation,
    SweepEta,
    Verify,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Simulate2d => "simulate2d",
            Kind::TrainNet => "train-net",
            Kind::SweepBifurcation => "sweep-bifurcation",
            Kind::SweepEta => "sweep-eta",
            Kind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub simulate2d: Simulate2dSection,
    pub network: NetworkSection,
    pub bifurcation: BifurcationSection,
    pub sweep_eta: SweepEtaSection,
    pub verify: VerifySection,
    pub tolerances: Tolerances,
}

/// Settings shared by every experiment. `out` and `workers` do not affect
/// results and are left out of the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub eta: f64,
    pub seed: u64,
    /// Step cap for the two-dimensional systems.
    pub max_steps: usize,
    /// Write every this many trajectory rows; the final row is always written.
    pub csv_stride: usize,
    #[serde(skip_serializing)]
    pub out: PathBuf,
    #[serde(skip_serializing)]
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            eta: 0.01,
            seed: 0,
            max_steps: 1_000_000,
            csv_stride: 1,
            out: PathBuf::from("out"),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model2d {
    LogcoshXy,
    SqTanh,
    SqElu,
    LinearRecursion,
    NonlinearRecursion,
}

impl Model2d {
    pub fn toy(self) -> Option<ToyModel> {
        match self {
            Model2d::LogcoshXy => Some(ToyModel::LogcoshXy),
            Model2d::SqTanh => Some(ToyModel::SqTanh),
            Model2d::SqElu => Some(ToyModel::SqElu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulate2dSection {
    pub model: Model2d,
    /// Loss of `linear-recursion`.
    pub loss: ScalarLoss,
    /// Activation of `nonlinear-recursion`.
    pub activation: Activation,
    pub p0: f64,
    pub q0: f64,
    pub sharpness_every: usize,
}

impl Default for Simulate2dSection {
    fn default() -> Self {
        Simulate2dSection {
            model: Model2d::LinearRecursion,
            loss: ScalarLoss::LogCosh,
            activation: Activation::Tanh,
            p0: 1.0,
            q0: 0.9,
            sharpness_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// `x = e₁` with target `y`.
    UnitPoint,
    /// Standard Gaussian inputs and targets.
    Gaussian,
}

/// Two-layer and deeper networks. Runs are the product of `depths`,
/// `widths`, `gains` and `replicas` seeds starting at `run.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub d: usize,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub gains: Vec<f64>,
    pub replicas: usize,
    pub activation: Activation,
    pub loss: ScalarLoss,
    pub data: DataKind,
    pub y: f64,
    pub n: usize,
    /// Seed of the Gaussian batch; `run.seed + 1` when absent.
    pub data_seed: Option<u64>,
    pub aggregator: Aggregator,
    pub steps: usize,
    pub sharpness_every: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            d: 10,
            widths: vec![256],
            depths: vec![2],
            gains: vec![10.0],
            replicas: 1,
            activation: Activation::Linear,
            loss: ScalarLoss::LogCosh,
            data: DataKind::UnitPoint,
            y: 1.0,
            n: 8,
            data_seed: None,
            aggregator: Aggregator::Mean,
            steps: 5_000,
            sharpness_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSpec {
    LogCosh,
    SquareRoot,
    Tanh,
    Elu,
    Linear,
}

impl RatioSpec {
    pub fn rfn(self) -> RFunction {
        match self {
            RatioSpec::LogCosh => RFunction::from_loss(ScalarLoss::LogCosh),
            RatioSpec::SquareRoot => RFunction::from_loss(ScalarLoss::SquareRoot),
            RatioSpec::Tanh => RFunction::from_activation(Activation::Tanh),
            RatioSpec::Elu => RFunction::from_activation(Activation::Elu),
            RatioSpec::Linear => RFunction::from_activation(Activation::Linear),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcationSection {
    pub ratio: RatioSpec,
    pub q_min: f64,
    pub q_max: f64,
    pub points: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub p0: f64,
    /// Absolute tolerance of the period detection in `orbits.csv`.
    pub period_tol: f64,
}

impl Default for BifurcationSection {
    fn default() -> Self {
        BifurcationSection {
            ratio: RatioSpec::LogCosh,
            q_min: 0.3,
            q_max: 1.5,
            points: 481,
            burn_in: DEFAULT_BURN_IN,
            samples: DEFAULT_SAMPLES,
            p0: DEFAULT_P0,
            period_tol: 1e-8,
        }
    }
}

/// Step sizes `run.eta · factor^i` for `i < count`, each simulated as in `[simulate2d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepEtaSection {
    pub count: usize,
    pub factor: f64,
}

impl Default for SweepEtaSection {
    fn default() -> Self {
        SweepEtaSection { count: 3, factor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Linear,
    Nonlinear,
    Map,
    Hessian,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub suite: Suite,
    /// Random draws for the sharpness sandwiches.
    pub draws: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            suite: Suite::All,
            draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub p_tol: f64,
    pub q_tol: f64,
    pub calm_steps: usize,
    pub tol_mult: f64,
    pub c_res: f64,
    pub c_tb: f64,
    pub c_gap: f64,
    pub nonlinear_gap: f64,
    pub enforce_hypotheses: bool,
    pub delta: Option<f64>,
    pub power_max_iters: usize,
    pub power_rel_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let stop = StopCriteria::default();
        let lim = LimitingQConfig::default();
        let sharp = SharpeningConfig::default();
        let power = PowerIterConfig::default();
        Tolerances {
            p_tol: stop.p_tol,
            q_tol: stop.q_tol,
            calm_steps: stop.calm_steps,
            tol_mult: 2.0,
            c_res: lim.c_res,
            c_tb: lim.c_tb,
            c_gap: sharp.c_gap,
            nonlinear_gap: sharp.nonlinear_gap,
            enforce_hypotheses: true,
            delta: None,
            power_max_iters: power.max_iters,
            power_rel_tol: power.rel_tol,
        }
    }
}

impl Tolerances {
    pub fn stop(&self) -> StopCriteria {
        StopCriteria {
            p_tol: self.p_tol,
            q_tol: self.q_tol,
            calm_steps: self.calm_steps,
            q_above: None,
        }
    }

    pub fn limiting(&self) -> LimitingQConfig {
        LimitingQConfig {
            c_res: self.c_res,
            c_tb: self.c_tb,
        }
    }

    pub fn sharpening(&self) -> SharpeningConfig {
        SharpeningConfig {
            c_gap: self.c_gap,
            nonlinear_gap: self.nonlinear_gap,
        }
    }

    pub fn eos(&self) -> EosOptions {
        EosOptions {
            enforce_hypotheses: self.enforce_hypotheses,
            delta: self.delta,
        }
    }

    pub fn power(&self, seed: u64) -> PowerIterConfig {
        PowerIterConfig {
            max_iters: self.power_max_iters,
            rel_tol: self.power_rel_tol,
            seed,
        }
    }
}

/// Command-line values that take precedence over every file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub eta: Option<f64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// `section.key=value` assignments, values in TOML syntax.
    pub set: Vec<String>,
}

pub const PRESETS: [&str; 6] = ["fig1a", "fig1b", "fig1c", "fig2a", "fig2b", "fig3-width"];

/// The experiment kind and the TOML layer of a named preset.
pub fn preset(name: &str) -> Result<(Kind, &'static str), ConfigError> {
    let preset = match name {
        "fig1a" => (
            Kind::Simulate2d,
            "[run]\neta = 0.08\n[simulate2d]\nmodel = \"logcosh-xy\"\np0 = 1.0\nq0 = 0.9\n",
        ),
        "fig1b" => (
            Kind::Simulate2d,
            "[run]\neta = 0.005\n[simulate2d]\nmodel = \"sq-tanh\"\np0 = 1.0\nq0 = 0.9\n",
        ),
        "fig1c" => (
            Kind::Simulate2d,
            "[run]\neta = 0.005\nmax_steps = 5000\n[simulate2d]\nmodel = \"sq-elu\"\np0 = 1.0\nq0 = 0.6\n",
        ),
        "fig2a" => (
            Kind::TrainNet,
            "[network]\nwidths = [256]\ngains = [5.0]\nreplicas = 5\nsteps = 20000\n",
        ),
        "fig2b" => (
            Kind::TrainNet,
            "[network]\nwidths = [256]\ngains = [10.0]\nreplicas = 5\nsteps = 20000\n",
        ),
        "fig3-width" => (
            Kind::TrainNet,
            "[network]\nactivation = \"tanh\"\nwidths = [64, 256, 512]\ndepths = [3]\n\
             gains = [0.5, 1.0, 2.0, 5.0, 10.0]\nsharpness_every = 0\nsteps = 2000\n",
        ),
        other => return Err(bad(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
    };
    Ok(preset)
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, ConfigError> {
    // Strict parse first so that unknown keys and bad values report their line.
    toml::from_str::<ExperimentConfig>(text).map_err(|e| bad(format!("{origin}: {e}")))?;
    toml::from_str::<toml::Table>(text).map_err(|e| bad(format!("{origin}: {e}")))
}

/// Merges `top` into `base`, descending into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn assignment(set: &str) -> Result<toml::Table, ConfigError> {
    let (path, value) = set
        .split_once('=')
        .ok_or_else(|| bad(format!("--set {set:?}: expected section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| bad(format!("--set {set:?}: expected section.key=value")))?;
    let text = format!("[{section}]\n{key} = {}\n", value.trim());
    parse_table(&text, &format!("--set {path}"))
}

/// Layers preset, file, `--set` and flags, then validates.
pub fn load(preset_layer: Option<&str>, file: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut table = toml::Table::new();
    if let Some(text) = preset_layer {
        merge(&mut table, parse_table(text, "preset")?);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        merge(&mut table, parse_table(&text, &path.display().to_string())?);
    }
    for set in &ov.set {
        merge(&mut table, assignment(set)?);
    }
    let mut cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.to_string()))?;
    if let Some(seed) = ov.seed {
        cfg.run.seed = seed;
    }
    if let Some(eta) = ov.eta {
        cfg.run.eta = eta;
    }
    if let Some(out) = &ov.out {
        cfg.run.out = out.clone();
    }
    if let Some(workers) = ov.workers {
        cfg.run.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn positive(field: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{field} = {value} must be positive and finite")))
    }
}

fn at_least(field: &str, value: usize, min: usize) -> Result<(), ConfigError> {
    if value >= min {
        Ok(())
    } else {
        Err(bad(format!("{field} = {value} must be at least {min}")))
    }
}

fn finite(field: &str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{field} = {value} must be finite")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("run.eta", self.run.eta)?;
        at_least("run.max_steps", self.run.max_steps, 1)?;
        at_least("run.workers", self.run.workers, 1)?;
        at_least("run.csv_stride", self.run.csv_stride, 1)?;

        let s = &self.simulate2d;
        finite("simulate2d.p0", s.p0)?;
        positive("simulate2d.q0", s.q0)?;

        let n = &self.network;
        at_least("network.d", n.d, 1)?;
        at_least("network.replicas", n.replicas, 1)?;
        at_least("network.n", n.n, 1)?;
        at_least("network.steps", n.steps, 1)?;
        finite("network.y", n.y)?;
        for (field, list) in [("network.widths", &n.widths), ("network.depths", &n.depths)] {
            if list.is_empty() {
                return Err(bad(format!("{field} is empty")));
            }
        }
        for (i, &m) in n.widths.iter().enumerate() {
            at_least(&format!("network.widths[{i}]"), m, 1)?;
        }
        for (i, &l) in n.depths.iter().enumerate() {
            at_least(&format!("network.depths[{i}]"), l, 2)?;
        }
        if n.gains.is_empty() {
            return Err(bad("network.gains is empty"));
        }
        for (i, &g) in n.gains.iter().enumerate() {
            positive(&format!("network.gains[{i}]"), g)?;
        }

        let b = &self.bifurcation;
        positive("bifurcation.q_min", b.q_min)?;
        positive("bifurcation.q_max", b.q_max)?;
        at_least("bifurcation.points", b.points, 1)?;
        at_least("bifurcation.samples", b.samples, 1)?;
        finite("bifurcation.p0", b.p0)?;
        positive("bifurcation.period_tol", b.period_tol)?;
        if b.points > 1 && !(b.q_max > b.q_min) {
            return Err(bad(format!(
                "bifurcation.q_max = {} must exceed bifurcation.q_min = {}",
                b.q_max, b.q_min
            )));
        }

        at_least("sweep_eta.count", self.sweep_eta.count, 1)?;
        positive("sweep_eta.factor", self.sweep_eta.factor)?;
        at_least("verify.draws", self.verify.draws, 1)?;

        let t = &self.tolerances;
        positive("tolerances.p_tol", t.p_tol)?;
        positive("tolerances.q_tol", t.q_tol)?;
        at_least("tolerances.calm_steps", t.calm_steps, 1)?;
        for (field, v) in [
            ("tolerances.tol_mult", t.tol_mult),
            ("tolerances.c_res", t.c_res),
            ("tolerances.c_tb", t.c_tb),
            ("tolerances.c_gap", t.c_gap),
            ("tolerances.nonlinear_gap", t.nonlinear_gap),
            ("tolerances.power_rel_tol", t.power_rel_tol),
        ] {
            positive(field, v)?;
        }
        if let Some(delta) = t.delta {
            positive("tolerances.delta", delta)?;
        }
        at_least("tolerances.power_max_iters", t.power_max_iters, 1)?;
        Ok(())
    }

    /// SHA-256 of the experiment kind and the canonical TOML of every field
    /// that affects results.
    pub fn hash(&self, kind: Kind) -> String {
        let body = toml::to_string(self).expect("configuration serializes");
        let mut h = Sha256::new();
        h.update(format!("experiment = \"{}\"\n", kind.as_str()));
        h.update(body);
        hex::encode(h.finalize())
    }
}
