//! Bias-free fully-connected networks `f(x) = w_Lᵀ φ(W_{L−1} ⋯ φ(W_1 x))`
//! with exact gradients, Hessian-vector products and sharpness estimates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar_models::{Activation, ScalarLoss};

/// Largest parameter count accepted by [`exact_hessian_2layer_linear`].
pub const DENSE_HESSIAN_LIMIT: usize = 4096;

/// A list of matrices shaped like the network's layers; used for weights,
/// gradients and directions alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layers(pub Vec<DMatrix<f64>>);

impl Layers {
    pub fn zeros_like(other: &Layers) -> Layers {
        Layers(
            other
                .0
                .iter()
                .map(|m| DMatrix::zeros(m.nrows(), m.ncols()))
                .collect(),
        )
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.0.iter().map(|m| (m.nrows(), m.ncols())).collect()
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dot(&self, other: &Layers) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn scale(&mut self, a: f64) {
        for m in &mut self.0 {
            *m *= a;
        }
    }

    /// `self += a·other`
    pub fn axpy(&mut self, a: f64, other: &Layers) {
        for (m, o) in self.0.iter_mut().zip(&other.0) {
            m.zip_apply(o, |x, y| *x += a * y);
        }
    }

    /// Concatenation of every layer in row-major order.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len());
        for m in &self.0 {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        }
        DVector::from_vec(out)
    }

    pub fn unflatten(shapes: &[(usize, usize)], flat: &[f64]) -> Result<Layers> {
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if total != flat.len() {
            return Err(Error::Shape(format!(
                "flat vector of length {} for {total} parameters",
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut out = Vec::with_capacity(shapes.len());
        for &(r, c) in shapes {
            out.push(DMatrix::from_row_slice(r, c, &flat[offset..offset + r * c]));
            offset += r * c;
        }
        Ok(Layers(out))
    }

    fn same_shape(&self, other: &Layers) -> bool {
        self.shapes() == other.shapes()
    }

    fn all_finite(&self) -> bool {
        self.0.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `W_1` (m×d), hidden `W_l` (m×m), and the output row `w_Lᵀ` (1×m).
    pub layers: Layers,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<DMatrix<f64>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network without layers".into()));
        }
        for w in layers.windows(2) {
            if w[1].ncols() != w[0].nrows() {
                return Err(Error::Shape(format!(
                    "layer of shape {}x{} follows one with {} outputs",
                    w[1].nrows(),
                    w[1].ncols(),
                    w[0].nrows()
                )));
            }
        }
        if layers.last().is_some_and(|w| w.nrows() != 1) {
            return Err(Error::Shape("the output layer must have one row".into()));
        }
        let layers = Layers(layers);
        if !layers.all_finite() {
            return Err(Error::Shape("non-finite weight".into()));
        }
        Ok(MlpParams { layers, activation })
    }

    /// Two-layer network `vᵀ φ(U x)`.
    pub fn two_layer(u: DMatrix<f64>, v: &DVector<f64>, activation: Activation) -> Result<Self> {
        MlpParams::new(vec![u, row(v)], activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.0[0].ncols()
    }

    pub fn depth(&self) -> usize {
        self.layers.0.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.len()
    }

    fn with_layers(&self, layers: Layers) -> MlpParams {
        MlpParams {
            layers,
            activation: self.activation,
        }
    }

    fn check_direction(&self, dir: &Layers) -> Result<()> {
        if self.layers.same_shape(dir) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "direction shapes {:?} differ from parameter shapes {:?}",
                dir.shapes(),
                self.layers.shapes()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBatch {
    /// n×d, one sample per row.
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl DataBatch {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        Ok(DataBatch { inputs, targets })
    }

    pub fn single(x: &DVector<f64>, y: f64) -> Self {
        DataBatch {
            inputs: row(x),
            targets: DVector::from_element(1, y),
        }
    }

    /// `x = e₁ ∈ ℝ^d` with target `y`.
    pub fn unit_point(d: usize, y: f64) -> Self {
        let mut x = DVector::zeros(d);
        x[0] = 1.0;
        DataBatch::single(&x, y)
    }

    /// Standard Gaussian inputs and targets from a seeded generator.
    pub fn gaussian(n: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            cells.push(rng.sample::<f64, _>(StandardNormal));
        }
        let inputs = DMatrix::from_row_slice(n, d, &cells);
        let targets = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        DataBatch::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> DVector<f64> {
        self.inputs.row(i).transpose()
    }
}

/// Loss applied to the residual `f(x) − y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Loss(ScalarLoss),
    /// `½p²`, used for the single-neuron model.
    HalfSquare,
}

impl From<ScalarLoss> for Objective {
    fn from(l: ScalarLoss) -> Self {
        Objective::Loss(l)
    }
}

impl Objective {
    pub fn eval(self, p: f64) -> f64 {
        match self {
            Objective::Loss(l) => l.eval(p),
            Objective::HalfSquare => 0.5 * p * p,
        }
    }

    pub fn d1(self, p: f64) -> f64 {
        match self {
            Objective::Loss(l) => l.d1(p),
            Objective::HalfSquare => p,
        }
    }

    pub fn d2(self, p: f64) -> f64 {
        match self {
            Objective::Loss(l) => l.d2(p),
            Objective::HalfSquare => 1.0,
        }
    }
}

struct SamplePass {
    f: f64,
    grad: Layers,
    /// `(∇f·V, ∇²f·V)` for the requested direction.
    directional: Option<(f64, Layers)>,
}

fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn map(v: &DVector<f64>, g: impl Fn(f64) -> f64) -> DVector<f64> {
    v.map(g)
}

/// Forward pass, reverse accumulation of `∇f`, and optionally its
/// R-operator image along `dir`.
fn sample_pass(params: &MlpParams, x: &DVector<f64>, dir: Option<&Layers>) -> Result<SamplePass> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input of length {} for input dimension {}",
            x.len(),
            params.input_dim()
        )));
    }
    let act = params.activation;
    let w = &params.layers.0;
    let depth = w.len();
    let hidden = depth - 1;

    let mut hs = Vec::with_capacity(depth);
    let mut zs = Vec::with_capacity(hidden);
    let mut rhs = Vec::with_capacity(depth);
    let mut rzs = Vec::with_capacity(hidden);
    hs.push(x.clone());
    rhs.push(DVector::zeros(x.len()));
    for l in 0..hidden {
        let z = &w[l] * &hs[l];
        hs.push(map(&z, |t| act.eval(t)));
        if let Some(v) = dir {
            let rz = &v.0[l] * &hs[l] + &w[l] * &rhs[l];
            rhs.push(rz.component_mul(&map(&z, |t| act.d1(t))));
            rzs.push(rz);
        }
        zs.push(z);
    }
    let last = &hs[hidden];
    let f = (&w[hidden] * last)[0];

    let mut grad = vec![DMatrix::zeros(0, 0); depth];
    let mut rgrad = vec![DMatrix::zeros(0, 0); depth];
    grad[hidden] = row(last);
    let mut rf = 0.0;
    if let Some(v) = dir {
        rf = (&v.0[hidden] * last)[0] + (&w[hidden] * &rhs[hidden])[0];
        rgrad[hidden] = row(&rhs[hidden]);
    }

    let mut back: DVector<f64> = w[hidden].transpose().column(0).into_owned();
    let mut rback: DVector<f64> = match dir {
        Some(v) => v.0[hidden].transpose().column(0).into_owned(),
        None => DVector::zeros(back.len()),
    };
    for l in (0..hidden).rev() {
        let d1 = map(&zs[l], |t| act.d1(t));
        let gz = back.component_mul(&d1);
        grad[l] = &gz * hs[l].transpose();
        if let Some(v) = dir {
            let d2 = map(&zs[l], |t| act.d2(t));
            let rgz = rback.component_mul(&d1) + back.component_mul(&d2).component_mul(&rzs[l]);
            rgrad[l] = &rgz * hs[l].transpose() + &gz * rhs[l].transpose();
            if l > 0 {
                rback = v.0[l].transpose() * &gz + w[l].transpose() * &rgz;
            }
        }
        if l > 0 {
            back = w[l].transpose() * &gz;
        }
    }

    Ok(SamplePass {
        f,
        grad: Layers(grad),
        directional: dir.map(|_| (rf, Layers(rgrad))),
    })
}

pub fn forward(params: &MlpParams, x: &DVector<f64>) -> Result<f64> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input of length {} for input dimension {}",
            x.len(),
            params.input_dim()
        )));
    }
    let w = &params.layers.0;
    let mut h = x.clone();
    for layer in &w[..w.len() - 1] {
        h = map(&(layer * &h), |t| params.activation.eval(t));
    }
    Ok((&w[w.len() - 1] * h)[0])
}

/// `f(x)` and `∇_Θ f(x)`.
pub fn output_and_grad(params: &MlpParams, x: &DVector<f64>) -> Result<(f64, Layers)> {
    let pass = sample_pass(params, x, None)?;
    Ok((pass.f, pass.grad))
}

fn check_batch(params: &MlpParams, batch: &DataBatch) -> Result<()> {
    if batch.inputs.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch inputs of dimension {} for input dimension {}",
            batch.inputs.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Mean loss over the batch and its exact gradient.
pub fn loss_and_grad(params: &MlpParams, batch: &DataBatch, loss: Objective) -> Result<(f64, Layers)> {
    check_batch(params, batch)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grad = Layers::zeros_like(&params.layers);
    for i in 0..batch.len() {
        let pass = sample_pass(params, &batch.input(i), None)?;
        let res = pass.f - batch.targets[i];
        total += loss.eval(res);
        grad.axpy(loss.d1(res) / n, &pass.grad);
    }
    Ok((total / n, grad))
}

/// One full-batch gradient step.
pub fn gd_step(params: &MlpParams, batch: &DataBatch, loss: Objective, eta: f64) -> Result<MlpParams> {
    let (_, grad) = loss_and_grad(params, batch, loss)?;
    let mut layers = params.layers.clone();
    layers.axpy(-eta, &grad);
    Ok(params.with_layers(layers))
}

/// Exact Hessian-vector product of the mean loss.
pub fn hvp(params: &MlpParams, batch: &DataBatch, loss: Objective, vec: &Layers) -> Result<Layers> {
    check_batch(params, batch)?;
    params.check_direction(vec)?;
    let n = batch.len() as f64;
    let mut out = Layers::zeros_like(&params.layers);
    for i in 0..batch.len() {
        let pass = sample_pass(params, &batch.input(i), Some(vec))?;
        let res = pass.f - batch.targets[i];
        let (rf, rgrad) = pass.directional.expect("direction supplied");
        out.axpy(loss.d2(res) * rf / n, &pass.grad);
        out.axpy(loss.d1(res) / n, &rgrad);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        PowerIterConfig {
            max_iters: 1000,
            rel_tol: 1e-10,
            seed: 0,
        }
    }
}

impl PowerIterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Domain {
                what: "max_iters",
                value: 0.0,
                domain: ">= 1",
            });
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Domain {
                what: "rel_tol",
                value: self.rel_tol,
                domain: "(0, inf)",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Relative residual `‖Av − λv‖/‖Av‖` above which a settled Rayleigh
/// quotient is not trusted as an eigenvalue.
const STALL_RESIDUAL: f64 = 1e-3;

struct PowerRun {
    lambda: f64,
    converged: bool,
    /// The Rayleigh quotient settled on a vector that is not an eigenvector.
    stalled: bool,
    iterations: usize,
    /// `‖Av‖` at the final iterate.
    image_norm: f64,
}

/// Power iteration for the dominant eigenvalue of `op + shift·I`.
fn power_iterate(
    op: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    start: &DVector<f64>,
    shift: f64,
    cfg: &PowerIterConfig,
) -> Result<PowerRun> {
    let mut v = start.normalize();
    let mut prev = f64::NAN;
    let mut image_norm = 0.0;
    for it in 1..=cfg.max_iters {
        let mut w = op(&v)?;
        if shift != 0.0 {
            w.axpy(shift, &v, 1.0);
        }
        let lambda = v.dot(&w);
        image_norm = w.norm();
        if image_norm == 0.0 {
            return Ok(PowerRun {
                lambda: 0.0,
                converged: true,
                stalled: false,
                iterations: it,
                image_norm,
            });
        }
        if (lambda - prev).abs() < cfg.rel_tol * lambda.abs() {
            let residual = (&w - &v * lambda).norm() / image_norm;
            return Ok(PowerRun {
                lambda,
                converged: true,
                stalled: residual > STALL_RESIDUAL,
                iterations: it,
                image_norm,
            });
        }
        prev = lambda;
        v = w / image_norm;
    }
    Ok(PowerRun {
        lambda: prev,
        converged: false,
        stalled: false,
        iterations: cfg.max_iters,
        image_norm,
    })
}

/// Largest eigenvalue of a symmetric operator given by its action.
///
/// Plain power iteration finds the eigenvalue of largest magnitude. When
/// that is negative, or the iteration stalls (as it does between `±λ`
/// pairs) or fails to settle, the operator is shifted by the magnitude
/// estimate so that the largest eigenvalue becomes dominant.
pub fn lambda_max_operator(
    op: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    dim: usize,
    cfg: &PowerIterConfig,
) -> Result<SharpnessEstimate> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let first = power_iterate(op, &start, 0.0, cfg)?;
    if first.converged && !first.stalled && first.lambda >= 0.0 {
        return Ok(SharpnessEstimate {
            value: first.lambda,
            converged: true,
            iterations: first.iterations,
        });
    }
    let shift = first.image_norm.max(first.lambda.abs());
    let second = power_iterate(op, &start, shift, cfg)?;
    Ok(SharpnessEstimate {
        value: second.lambda - shift,
        converged: second.converged,
        iterations: first.iterations + second.iterations,
    })
}

/// `λ_max` of the loss Hessian by power iteration on [`hvp`].
pub fn sharpness(
    params: &MlpParams,
    batch: &DataBatch,
    loss: Objective,
    cfg: &PowerIterConfig,
) -> Result<SharpnessEstimate> {
    check_batch(params, batch)?;
    let shapes = params.layers.shapes();
    let op = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let dir = Layers::unflatten(&shapes, v.as_slice())?;
        Ok(hvp(params, batch, loss, &dir)?.flatten())
    };
    lambda_max_operator(&op, params.num_params(), cfg)
}

/// Rows are the flattened per-sample gradients `∇_Θ f(x_i)`.
pub fn jacobian(params: &MlpParams, batch: &DataBatch) -> Result<DMatrix<f64>> {
    check_batch(params, batch)?;
    let mut rows = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let (_, g) = output_and_grad(params, &batch.input(i))?;
        rows.push(g.flatten().transpose());
    }
    Ok(DMatrix::from_rows(&rows))
}

/// Largest eigenvalue of the Gram matrix `G_ij = ∇f(x_i)·∇f(x_j)`.
pub fn gram_spectral_norm(params: &MlpParams, batch: &DataBatch) -> Result<f64> {
    if batch.len() == 1 {
        let (_, grad) = output_and_grad(params, &batch.input(0))?;
        return Ok(grad.norm_squared());
    }
    let j = jacobian(params, batch)?;
    let gram = &j * j.transpose();
    Ok(symmetric_lambda_max(gram))
}

pub fn symmetric_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn symmetric_lambda_max(m: DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).last().copied().unwrap_or(f64::NAN)
}

/// Xavier-uniform weights scaled by `gain`.
///
/// `dims` lists layer widths from input to output, e.g. `[d, m, m, 1]`.
/// Each weight is `a·(2u − 1)` with `u` uniform on [0, 1) from ChaCha8
/// seeded with `seed`, filled layer by layer in row-major order.
pub fn init_xavier(dims: &[usize], gain: f64, seed: u64, activation: Activation) -> Result<MlpParams> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Shape(format!("invalid layer widths {dims:?}")));
    }
    if dims[dims.len() - 1] != 1 {
        return Err(Error::Shape("the output width must be 1".into()));
    }
    if !(gain >= 0.0 && gain.is_finite()) {
        return Err(Error::Domain {
            what: "gain",
            value: gain,
            domain: "[0, inf)",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let cells: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| a * (2.0 * rng.random::<f64>() - 1.0) + 0.0)
                .collect();
            DMatrix::from_row_slice(fan_out, fan_in, &cells)
        })
        .collect();
    MlpParams::new(layers, activation)
}

/// Layer widths `[d, m, …, m, 1]` of a depth-`depth` network.
pub fn widths(d: usize, m: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend(std::iter::repeat_n(m, depth.saturating_sub(1)));
    dims.push(1);
    dims
}

/// `∇²(vᵀUx) = [[0, xᵀ], [x, 0]] ⊗ I_m` in the coordinates
/// `(v_1..v_m, U_{·1}, …, U_{·d})` (U column by column).
pub fn bilinear_hessian(m: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = x.len();
    let order = m * (d + 1);
    if order > DENSE_HESSIAN_LIMIT {
        return Err(Error::TooLarge {
            order,
            limit: DENSE_HESSIAN_LIMIT,
        });
    }
    let mut h = DMatrix::zeros(order, order);
    for j in 0..d {
        for i in 0..m {
            let (a, b) = (i, m * (j + 1) + i);
            h[(a, b)] = x[j];
            h[(b, a)] = x[j];
        }
    }
    Ok(h)
}

/// Dense loss Hessian of `ℓ(vᵀUx − y)` in the coordinates of [`bilinear_hessian`].
pub fn exact_hessian_2layer_linear(
    u: &DMatrix<f64>,
    v: &DVector<f64>,
    x: &DVector<f64>,
    y: f64,
    loss: Objective,
) -> Result<DMatrix<f64>> {
    let (m, d) = (u.nrows(), u.ncols());
    if v.len() != m || x.len() != d {
        return Err(Error::Shape(format!(
            "U is {m}x{d}, v has {} entries, x has {}",
            v.len(),
            x.len()
        )));
    }
    let mut h = bilinear_hessian(m, x)?;
    let ux = u * x;
    let p = v.dot(&ux) - y;
    let mut g = DVector::zeros(m * (d + 1));
    g.rows_mut(0, m).copy_from(&ux);
    for j in 0..d {
        g.rows_mut(m * (j + 1), m).copy_from(&(v * x[j]));
    }
    h *= loss.d1(p);
    h.ger(loss.d2(p), &g, &g, 1.0);
    Ok(h)
}
