//! Gradients, the hybrid Riemannian step and the solve loops.
//!
//! Interior cores live on Stiefel manifolds and move by projected gradient
//! steps followed by a polar retraction; the last core is unconstrained and
//! takes a plain gradient step. The interior step is divided by an energy
//! estimate of `‖X*‖_F²` so both groups move at comparable relative speed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TtError};
use crate::linalg::Matrix;
use crate::metric::align_rotations_from;
use crate::sensing::{OperatorKind, SensingOperator};
use crate::stiefel::{check_orthonormal, polar_retract, split_tangent};
use crate::svd::{left_orthogonalize, tt_distance, tt_svd};
use crate::tensor::{DenseTensor, TtTensor};

/// Loss growth factor that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Gradients of `X ↦ ⟨G, X⟩` with respect to each `L(X_i)`.
///
/// With `G = X − T` these are the factorization gradients, with
/// `G = c A*(A(X) − y)` the sensing ones. Slice `s` of the `i`-th gradient is
/// `Pᵀ G(:, s, :) Qᵀ` with `P` the prefix product of cores `< i` and `Q` the
/// suffix product of cores `> i`; `Pᵀ G` is accumulated left to right and
/// `Qᵀ` right to left, so no unfolding of `X` is ever formed.
pub fn core_gradients(x: &TtTensor, g: &DenseTensor) -> Result<Vec<Matrix>> {
    if g.shape() != x.dims().as_slice() {
        return Err(TtError::domain(format!(
            "shape mismatch: {:?} vs {:?}",
            g.shape(),
            x.dims()
        )));
    }
    let n = x.order();
    // suffix[i]: rows indexed by (s_{i+1}, .., s_N), row = (X_{i+1}(s_{i+1}) .. X_N(s_N))ᵀ
    let mut suffix: Vec<Matrix> = vec![Matrix::from_element(1, 1, 1.0); n];
    for i in (0..n - 1).rev() {
        let core = x.core(i + 1);
        let prev = &suffix[i + 1];
        let d = core.dim();
        let mut next = Matrix::zeros(d * prev.nrows(), core.left_rank());
        for s in 0..d {
            let block = prev * core.slice(s).transpose();
            for c in 0..prev.nrows() {
                next.row_mut(s + d * c).copy_from(&block.row(c));
            }
        }
        suffix[i] = next;
    }
    let mut grads = Vec::with_capacity(n);
    let mut carry: Vec<f64> = g.data().to_vec();
    for (i, core) in x.cores().iter().enumerate() {
        let rows = core.left_rank() * core.dim();
        let h = Matrix::from_column_slice(rows, carry.len() / rows, &carry);
        grads.push(&h * &suffix[i]);
        if i + 1 < n {
            carry = core.left_unfolding().tr_mul(&h).as_slice().to_vec();
        }
    }
    Ok(grads)
}

/// Gradients of `½‖X − target‖_F²`.
pub fn grad_factorization(x: &TtTensor, target: &DenseTensor) -> Result<Vec<Matrix>> {
    let residual = x.to_dense()?.sub(target)?;
    core_gradients(x, &residual)
}

/// Gradients of `(1/2m)‖A(X) − y‖²`.
pub fn grad_sensing(x: &TtTensor, op: &SensingOperator, y: &[f64]) -> Result<Vec<Matrix>> {
    let (_, grads) = measurement_loss_and_grads(x, op, y, 1.0 / op.m() as f64)?;
    Ok(grads)
}

/// `(w/2)‖A(X) − y‖²` and its gradients.
fn measurement_loss_and_grads(x: &TtTensor, op: &SensingOperator, y: &[f64], w: f64) -> Result<(f64, Vec<Matrix>)> {
    if y.len() != op.m() {
        return Err(TtError::domain(format!(
            "expected {} measurements, got {}",
            op.m(),
            y.len()
        )));
    }
    let mut r = op.apply_tt(x)?;
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri -= yi;
    }
    let loss = 0.5 * w * r.iter().map(|v| v * v).sum::<f64>();
    r.iter_mut().for_each(|v| *v *= w);
    let back = op.adjoint(&r)?;
    Ok((loss, core_gradients(x, &back)?))
}

/// `Σ_{i<N} ‖P_T(∇_i)‖_F² + ‖∇_N‖²`.
pub fn riem_grad_norm2(x: &TtTensor, grads: &[Matrix]) -> Result<f64> {
    let n = x.order();
    let mut total = 0.0;
    for (i, g) in grads.iter().enumerate() {
        if i + 1 < n {
            let (tangent, _) = split_tangent(x.core(i).left_unfolding(), g)?;
            total += tangent.norm_squared();
        } else {
            total += g.norm_squared();
        }
    }
    Ok(total)
}

/// One hybrid step: retracted Riemannian steps of size `mu / energy` on the
/// interior cores, a Euclidean step of size `mu` on the last core.
pub fn rgd_step(x: &TtTensor, grads: &[Matrix], mu: f64, energy: f64) -> Result<TtTensor> {
    if grads.len() != x.order() {
        return Err(TtError::domain(format!(
            "{} gradients for {} cores",
            grads.len(),
            x.order()
        )));
    }
    if !(mu > 0.0) || !(energy > 0.0) {
        return Err(TtError::domain(format!(
            "step {mu} and energy {energy} must be positive"
        )));
    }
    let n = x.order();
    let mut out = x.clone();
    for (i, g) in grads.iter().enumerate() {
        let l = x.core(i).left_unfolding();
        if g.shape() != l.shape() {
            return Err(TtError::domain(format!("gradient {} has shape {:?}", i + 1, g.shape())));
        }
        let next = if i + 1 < n {
            check_orthonormal(l)?;
            let (tangent, _) = split_tangent(l, g)?;
            polar_retract(&(l - tangent * (mu / energy)))?
        } else {
            l - g * mu
        };
        out.set_left_unfolding(i, next)?;
    }
    Ok(out)
}

/// `tt_svd(c A*(y))`, `c` the operator's isometry scale.
pub fn spectral_init(op: &SensingOperator, y: &[f64], ranks: &[usize]) -> Result<TtTensor> {
    let back = op.adjoint(y)?.scaled(op.isometry_scale());
    tt_svd(&back, ranks)
}

/// What the solver is asked to fit.
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    /// `½‖X − T‖_F²`
    Factorization { target: &'a DenseTensor },
    /// `(1/2m)‖A(X) − y‖²`
    Sensing { op: &'a SensingOperator, y: &'a [f64] },
    /// `½‖P_Ω(X) − y‖²` over an entry mask.
    Completion { op: &'a SensingOperator, y: &'a [f64] },
}

impl Problem<'_> {
    fn dims(&self) -> Vec<usize> {
        match self {
            Problem::Factorization { target } => target.shape().to_vec(),
            Problem::Sensing { op, .. } | Problem::Completion { op, .. } => op.dims().to_vec(),
        }
    }

    fn loss_and_grads(&self, x: &TtTensor) -> Result<(f64, Vec<Matrix>)> {
        match *self {
            Problem::Factorization { target } => {
                let residual = x.to_dense()?.sub(target)?;
                let loss = 0.5 * residual.norm().powi(2);
                Ok((loss, core_gradients(x, &residual)?))
            }
            Problem::Sensing { op, y } => measurement_loss_and_grads(x, op, y, 1.0 / op.m() as f64),
            Problem::Completion { op, y } => measurement_loss_and_grads(x, op, y, 1.0),
        }
    }

    /// Energy estimate without ground truth.
    fn estimated_energy(&self) -> f64 {
        match *self {
            Problem::Factorization { target } => target.norm().powi(2),
            Problem::Sensing { op, y } | Problem::Completion { op, y } => {
                op.isometry_scale() * y.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyMode {
    /// `‖X*‖_F²` from the ground truth (the target for factorization).
    Exact,
    /// Isometry-scaled `‖y‖²`.
    Estimated,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Spectral,
    Provided,
    Random,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Spectral => "spectral",
            InitMode::Provided => "provided",
            InitMode::Random => "random",
        })
    }
}

impl FromStr for InitMode {
    type Err = TtError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(InitMode::Spectral),
            "provided" => Ok(InitMode::Provided),
            "random" => Ok(InitMode::Random),
            _ => Err(TtError::Config(format!("unknown init `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Bond ranks `(r_1, .., r_{N-1})` of the iterate.
    pub ranks: Vec<usize>,
    pub mu: f64,
    pub max_iters: usize,
    /// Stop once the squared Riemannian gradient norm is at most
    /// `grad_tol` times the initial loss.
    pub grad_tol: f64,
    pub energy_mode: EnergyMode,
    pub init: InitMode,
    /// Seed of the random initialization.
    pub seed: u64,
    /// Record every this many iterations; 0 disables tracing.
    pub trace_every: usize,
    /// Also trace the aligned factor distance (needs matching truth ranks).
    pub trace_dist2: bool,
    /// Record wall-clock time in the trace; off keeps traces bitwise reproducible.
    pub record_wall_time: bool,
}

impl SolveConfig {
    pub fn new(ranks: Vec<usize>) -> Self {
        SolveConfig {
            ranks,
            mu: 0.5,
            max_iters: 500,
            grad_tol: 1e-14,
            energy_mode: EnergyMode::Estimated,
            init: InitMode::Spectral,
            seed: 0,
            trace_every: 1,
            trace_dist2: false,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(TtError::Config(format!("step size must be positive, got {}", self.mu)));
        }
        if self.max_iters == 0 {
            return Err(TtError::Config("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(TtError::Config(format!(
                "grad_tol must be nonnegative, got {}",
                self.grad_tol
            )));
        }
        if let EnergyMode::Fixed(e) = self.energy_mode {
            if !(e > 0.0) || !e.is_finite() {
                return Err(TtError::Config(format!("fixed energy must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub tensor_error: Option<f64>,
    pub factor_dist2: Option<f64>,
    pub riem_grad_norm2: f64,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    /// Steps taken.
    pub iterations: usize,
    pub stop: StopReason,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub energy: f64,
}

pub const TRACE_HEADER: &str = "iteration,loss,tensor_error,factor_dist2,riem_grad_norm2,wall_time_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl SolveTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{},{},{:e},{}",
                r.iteration,
                r.loss,
                opt(r.tensor_error),
                opt(r.factor_dist2),
                r.riem_grad_norm2,
                opt(r.wall_time_s)
            )?;
        }
        Ok(())
    }
}

/// Runs hybrid RGD. `initial` is required for [`InitMode::Provided`]; `truth`
/// enables error tracing and [`EnergyMode::Exact`] for measurement problems.
pub fn solve(
    problem: Problem<'_>,
    config: &SolveConfig,
    initial: Option<&TtTensor>,
    truth: Option<&TtTensor>,
) -> Result<(TtTensor, SolveTrace)> {
    config.validate()?;
    let dims = problem.dims();
    if let Some(t) = truth {
        if t.dims() != dims {
            return Err(TtError::domain("ground truth dims differ from the problem"));
        }
    }
    if let Problem::Completion { op, .. } = problem {
        if op.kind() != OperatorKind::EntryMask {
            return Err(TtError::Config("completion needs an entry-mask operator".into()));
        }
    }
    let energy = match config.energy_mode {
        EnergyMode::Fixed(e) => e,
        EnergyMode::Estimated => problem.estimated_energy(),
        EnergyMode::Exact => match (problem, truth) {
            (Problem::Factorization { target }, _) => target.norm().powi(2),
            (_, Some(t)) => t.norm().powi(2),
            _ => return Err(TtError::Config("exact energy needs the ground truth".into())),
        },
    };
    if !(energy > 0.0) {
        return Err(TtError::Precondition(format!(
            "energy estimate {energy} is not positive"
        )));
    }

    let mut x = match config.init {
        InitMode::Provided => {
            let x0 = initial.ok_or_else(|| TtError::Config("provided init without an initial tensor".into()))?;
            if x0.dims() != dims || x0.bond_ranks() != config.ranks {
                return Err(TtError::domain("initial tensor does not match dims and ranks"));
            }
            left_orthogonalize(x0)
        }
        InitMode::Spectral => match problem {
            Problem::Factorization { target } => tt_svd(target, &config.ranks)?,
            Problem::Sensing { op, y } | Problem::Completion { op, y } => spectral_init(op, y, &config.ranks)?,
        },
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let raw = left_orthogonalize(&TtTensor::random(&dims, &config.ranks, &mut rng)?);
            let norm = raw.norm();
            raw.scaled(energy.sqrt() / norm)
        }
    };

    let truth_ortho = truth.map(left_orthogonalize);
    let align = config.trace_dist2 && truth_ortho.as_ref().is_some_and(|t| t.bond_ranks() == config.ranks);
    let truth_energy = truth.map(|t| t.norm().powi(2));
    let mut rotations: Option<Vec<Matrix>> = None;

    // Instant::now() is unavailable on some targets (wasm32), only read the clock on request
    let clock = config.record_wall_time.then(Instant::now);
    let mut records = Vec::new();
    let mut initial_loss = 0.0;
    let mut t = 0usize;
    let stop = loop {
        let (loss, grads) = problem.loss_and_grads(&x)?;
        if t == 0 {
            initial_loss = loss;
        }
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss.max(f64::MIN_POSITIVE) {
            return Err(TtError::Divergence {
                iteration: t,
                loss,
                initial: initial_loss,
            });
        }
        let rg2 = riem_grad_norm2(&x, &grads)?;
        let stop = if rg2 <= config.grad_tol * initial_loss {
            Some(StopReason::GradientTolerance)
        } else if t == config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if config.trace_every > 0 && (t.is_multiple_of(config.trace_every) || stop.is_some()) {
            let tensor_error = match truth {
                Some(tr) => Some(tt_distance(&x, tr)?),
                None => None,
            };
            let factor_dist2 = if align {
                let xs = truth_ortho.as_ref().expect("checked");
                let start = rotations
                    .take()
                    .unwrap_or_else(|| xs.bond_ranks().iter().map(|&r| Matrix::identity(r, r)).collect());
                let al = align_rotations_from(&x, xs, truth_energy.expect("truth present"), start)?;
                rotations = Some(al.rotations);
                Some(al.dist2)
            } else {
                None
            };
            records.push(TraceRecord {
                iteration: t,
                loss,
                tensor_error,
                factor_dist2,
                riem_grad_norm2: rg2,
                wall_time_s: clock.map(|c| c.elapsed().as_secs_f64()),
            });
        }
        if let Some(reason) = stop {
            break (reason, loss);
        }
        x = rgd_step(&x, &grads, config.mu, energy)?;
        t += 1;
    };
    Ok((
        x,
        SolveTrace {
            records,
            iterations: t,
            stop: stop.0,
            initial_loss,
            final_loss: stop.1,
            energy,
        },
    ))
}
