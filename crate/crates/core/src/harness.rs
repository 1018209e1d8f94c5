//! Seeded Monte-Carlo experiments over grids of problem sizes.
//!
//! A run expands the cartesian grid of orders, dims, ranks, fitted ranks,
//! measurement counts and noise levels, runs `trials` independent solves per
//! grid point and aggregates them. Every random draw of a trial is derived
//! from `base_seed` and the trial's coordinates, so results do not depend on
//! scheduling or thread count.
//!
//! Problem data (ground truth, operator, noise) does not depend on the fitted
//! rank, and truth and operator do not depend on the noise level, so sweeps
//! over those two axes compare solves on identical instances.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};
use crate::linalg::Matrix;
use crate::par::map_indexed;
use crate::rgd::{solve, EnergyMode, InitMode, Problem, SolveConfig, SolveTrace, StopReason};
use crate::sensing::{add_noise, estimate_rip, Distribution, SensingOperator, Storage};
use crate::svd::{left_orthogonalize, tt_distance, tt_svd};
use crate::tensor::{feasible_ranks, Core, DenseTensor, TtTensor};

/// Final error at or below which a recovery counts as successful.
pub const SUCCESS_THRESHOLD: f64 = 1e-5;

pub const RESULTS_HEADER: &str = "experiment,grid_id,order,dim,rank,fit_rank,m,gamma2,trial,seed,tensor_error,success,iterations,status,init_error,rate,wall_time_s,trace_file";
pub const SUMMARY_HEADER: &str = "experiment,grid_id,order,dim,rank,fit_rank,m,gamma2,trials,successes,success_rate,mean_error,mean_error2,median_error,mean_iterations,mean_rate";
pub const RIP_HEADER: &str = "grid_id,order,dim,rank,m,trials,probe_ranks,delta_hat,min_ratio,max_ratio";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a seed and a list of coordinates.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |h, &c| splitmix64(h ^ splitmix64(c)))
}

/// Random Gaussian tensor truncated to TT ranks `min(r, feasible)` and
/// normalized to unit Frobenius norm.
pub fn generate_ground_truth(order: usize, dim: usize, rank: usize, seed: u64) -> Result<TtTensor> {
    if order == 0 || dim == 0 || rank == 0 {
        return Err(TtError::domain("order, dim and rank must be positive"));
    }
    let dims = vec![dim; order];
    let ranks = feasible_ranks(&dims, rank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = DenseTensor::random_normal(dims, &mut rng)?;
    let tt = tt_svd(&dense, &ranks)?;
    let norm = tt.core(order - 1).left_unfolding().norm();
    Ok(tt.scaled(1.0 / norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Factorization,
    Sensing,
    Completion,
    Phase,
    CompletionPhase,
    NoiseSweep,
    Overparam,
    RipProbe,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Factorization => "factorization",
            ExperimentKind::Sensing => "sensing",
            ExperimentKind::Completion => "completion",
            ExperimentKind::Phase => "phase",
            ExperimentKind::CompletionPhase => "completion-phase",
            ExperimentKind::NoiseSweep => "noise-sweep",
            ExperimentKind::Overparam => "overparam",
            ExperimentKind::RipProbe => "rip-probe",
        }
    }

    fn is_completion(self) -> bool {
        matches!(self, ExperimentKind::Completion | ExperimentKind::CompletionPhase)
    }
}

impl FromStr for ExperimentKind {
    type Err = TtError;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::deserialize(toml::Value::String(s.to_string()))
            .map_err(|_| TtError::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyChoice {
    Exact,
    Estimated,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitChoice {
    Spectral,
    Random,
    /// Ground truth with relatively perturbed cores (factorization only).
    Perturbed,
}

/// A run description, read from a flat `key = value` TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub orders: Vec<usize>,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    /// Ranks of the iterate; empty means equal to the true rank.
    pub fit_ranks: Vec<usize>,
    pub measurements: Vec<usize>,
    /// Noise variances `γ²`.
    pub gamma2: Vec<f64>,
    /// Trials per grid point; defaults to 100 for phase experiments, 20 otherwise.
    pub trials: Option<usize>,
    /// Written as a string so seeds above 2^63 survive TOML.
    #[serde(with = "crate::io::u64_text")]
    pub base_seed: u64,
    pub success_threshold: f64,
    pub distribution: Distribution,
    pub storage: Option<Storage>,
    /// Step size; defaults to `1/(9N-5)` for factorization and 0.5 otherwise.
    pub mu: Option<f64>,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub energy_mode: EnergyChoice,
    pub energy_value: Option<f64>,
    /// Defaults to `perturbed` for factorization, `spectral` otherwise.
    pub init: Option<InitChoice>,
    /// Relative size of the core perturbation of the `perturbed` init.
    pub perturbation: f64,
    /// Defaults to 0 (no traces) for phase experiments, 1 otherwise.
    pub trace_every: Option<usize>,
    pub trace_dist2: bool,
    /// Record wall-clock times; off by default so outputs are reproducible.
    pub timing: bool,
    pub rip_trials: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Sensing,
            orders: vec![3],
            dims: vec![4],
            ranks: vec![2],
            fit_ranks: Vec::new(),
            measurements: vec![500],
            gamma2: vec![0.0],
            trials: None,
            base_seed: 0,
            success_threshold: SUCCESS_THRESHOLD,
            distribution: Distribution::Gaussian,
            storage: None,
            mu: None,
            max_iters: 500,
            grad_tol: 1e-14,
            energy_mode: EnergyChoice::Estimated,
            energy_value: None,
            init: None,
            perturbation: 0.1,
            trace_every: None,
            trace_dist2: false,
            timing: false,
            rip_trials: 200,
            threads: 1,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| TtError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| TtError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(match self.experiment {
            ExperimentKind::Phase | ExperimentKind::CompletionPhase => 100,
            _ => 20,
        })
    }

    pub fn trace_every(&self) -> usize {
        self.trace_every.unwrap_or(match self.experiment {
            ExperimentKind::Phase | ExperimentKind::CompletionPhase | ExperimentKind::RipProbe => 0,
            _ => 1,
        })
    }

    fn init_choice(&self) -> InitChoice {
        self.init.unwrap_or(match self.experiment {
            ExperimentKind::Factorization => InitChoice::Perturbed,
            _ => InitChoice::Spectral,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TtError::Config(msg));
        for (name, list) in [
            ("orders", &self.orders),
            ("dims", &self.dims),
            ("ranks", &self.ranks),
            ("measurements", &self.measurements),
        ] {
            if list.is_empty() || list.contains(&0) {
                return bad(format!("`{name}` must be a non-empty list of positive integers"));
            }
        }
        if self.fit_ranks.contains(&0) {
            return bad("`fit_ranks` must be positive".into());
        }
        if self.orders.iter().any(|&n| n < 2) {
            return bad("orders must be at least 2".into());
        }
        if self.gamma2.is_empty() || self.gamma2.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return bad("`gamma2` must be a non-empty list of nonnegative numbers".into());
        }
        if self.trials() == 0 {
            return bad("`trials` must be at least 1".into());
        }
        if !(self.success_threshold > 0.0) {
            return bad("`success_threshold` must be positive".into());
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return bad(format!("`mu` must be positive, got {mu}"));
            }
        }
        if self.max_iters == 0 {
            return bad("`max_iters` must be at least 1".into());
        }
        if !(self.grad_tol >= 0.0) {
            return bad("`grad_tol` must be nonnegative".into());
        }
        if self.energy_mode == EnergyChoice::Fixed && !self.energy_value.is_some_and(|v| v > 0.0) {
            return bad("`energy_mode = \"fixed\"` needs a positive `energy_value`".into());
        }
        if self.init_choice() == InitChoice::Perturbed && self.experiment != ExperimentKind::Factorization {
            return bad("`init = \"perturbed\"` is only available for factorization".into());
        }
        if !(self.perturbation >= 0.0) {
            return bad("`perturbation` must be nonnegative".into());
        }
        if self.rip_trials == 0 {
            return bad("`rip_trials` must be at least 1".into());
        }
        Ok(())
    }

    /// The expanded grid, in a fixed order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &order in &self.orders {
            for &dim in &self.dims {
                for &rank in &self.ranks {
                    let fits = if self.fit_ranks.is_empty() {
                        vec![rank]
                    } else {
                        self.fit_ranks.clone()
                    };
                    for &fit_rank in &fits {
                        for &m in &self.measurements {
                            for &gamma2 in &self.gamma2 {
                                out.push(GridPoint {
                                    grid_id: out.len(),
                                    order,
                                    dim,
                                    rank,
                                    fit_rank,
                                    m,
                                    gamma2,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub grid_id: usize,
    pub order: usize,
    pub dim: usize,
    pub rank: usize,
    pub fit_rank: usize,
    pub m: usize,
    pub gamma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Converged,
    MaxIters,
    Diverged,
    Singular,
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Converged => "converged",
            TrialStatus::MaxIters => "max-iters",
            TrialStatus::Diverged => "diverged",
            TrialStatus::Singular => "singular",
            TrialStatus::Failed => "failed",
        }
    }

    pub fn is_numerical_failure(self) -> bool {
        matches!(
            self,
            TrialStatus::Diverged | TrialStatus::Singular | TrialStatus::Failed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub experiment: ExperimentKind,
    pub point: GridPoint,
    pub trial: usize,
    pub seed: u64,
    pub tensor_error: f64,
    pub success: bool,
    pub iterations: usize,
    pub status: TrialStatus,
    pub init_error: Option<f64>,
    /// Fitted decay rate of `ln ‖X_t − X*‖²` per iteration.
    pub rate: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub trace_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub experiment: ExperimentKind,
    pub point: GridPoint,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_error: f64,
    pub mean_error2: f64,
    pub median_error: f64,
    pub mean_iterations: f64,
    pub mean_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RipRecord {
    pub point: GridPoint,
    pub trials: usize,
    pub probe_ranks: Vec<usize>,
    pub delta_hat: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub summaries: Vec<GridSummary>,
    /// `(grid_id, trial, trace)` for traced trials.
    pub traces: Vec<(usize, usize, SolveTrace)>,
    pub rip: Vec<RipRecord>,
}

impl ExperimentOutput {
    /// True when trials ran and every one of them failed numerically.
    pub fn all_failed_numerically(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.status.is_numerical_failure())
    }
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Squared errors below this are treated as converged to machine precision.
pub const RATE_FLOOR: f64 = 1e-24;

/// Fitted decay rate `−d ln ‖X_t − X*‖² / dt` over the traced records above
/// [`RATE_FLOOR`].
pub fn convergence_rate(trace: &SolveTrace) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .records
        .iter()
        .filter_map(|r| r.tensor_error.map(|e| (r.iteration as f64, e * e)))
        .filter(|&(_, e2)| e2 > RATE_FLOOR)
        .map(|(t, e2)| (t, e2.ln()))
        .unzip();
    fit_line(&xs, &ys).map(|(slope, _, _)| -slope)
}

/// Perturbs every core by Gaussian noise of relative Frobenius size `eps`
/// and restores left-orthogonality.
pub fn perturb_cores(x: &TtTensor, eps: f64, seed: u64) -> Result<TtTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cores = Vec::with_capacity(x.order());
    for core in x.cores() {
        let noise = Core::random(core.left_rank(), core.dim(), core.right_rank(), &mut rng);
        let l = core.left_unfolding();
        let scale = eps * l.norm() / noise.left_unfolding().norm();
        let unf: Matrix = l + noise.left_unfolding() * scale;
        cores.push(Core::from_left_unfolding(core.left_rank(), core.dim(), unf)?);
    }
    Ok(left_orthogonalize(&TtTensor::new(cores)?))
}

struct TrialOutcome {
    record: ResultRecord,
    trace: Option<SolveTrace>,
}

fn trace_name(grid_id: usize, trial: usize) -> String {
    format!("traces/g{grid_id}_t{trial}.csv")
}

fn run_trial(cfg: &ExperimentConfig, p: &GridPoint, trial: usize) -> TrialOutcome {
    let seed = derive_seed(
        cfg.base_seed,
        &[p.order as u64, p.dim as u64, p.rank as u64, trial as u64],
    );
    let started = cfg.timing.then(Instant::now);
    let outcome = solve_trial(cfg, p, seed);
    let wall = started.map(|s| s.elapsed().as_secs_f64());
    let trace_every = cfg.trace_every();
    let (tensor_error, iterations, status, trace) = match outcome {
        Ok((err, trace)) => {
            let status = match trace.stop {
                StopReason::GradientTolerance => TrialStatus::Converged,
                StopReason::MaxIters => TrialStatus::MaxIters,
            };
            (err, trace.iterations, status, Some(trace))
        }
        Err(e) => {
            let status = match e {
                TtError::Divergence { .. } => TrialStatus::Diverged,
                TtError::Singular(_) => TrialStatus::Singular,
                _ => TrialStatus::Failed,
            };
            (f64::NAN, 0, status, None)
        }
    };
    let init_error = trace
        .as_ref()
        .and_then(|t| t.records.first())
        .and_then(|r| (r.iteration == 0).then_some(r.tensor_error).flatten());
    let rate = trace.as_ref().and_then(convergence_rate);
    let traced = trace_every > 0 && trace.is_some();
    TrialOutcome {
        record: ResultRecord {
            experiment: cfg.experiment,
            point: *p,
            trial,
            seed,
            tensor_error,
            success: tensor_error <= cfg.success_threshold,
            iterations,
            status,
            init_error,
            rate,
            wall_time_s: wall,
            trace_file: traced.then(|| trace_name(p.grid_id, trial)),
        },
        trace: if traced { trace } else { None },
    }
}

fn solve_trial(cfg: &ExperimentConfig, p: &GridPoint, seed: u64) -> Result<(f64, SolveTrace)> {
    let truth = generate_ground_truth(p.order, p.dim, p.rank, derive_seed(seed, &[1]))?;
    let dims = truth.dims();
    let mu = cfg.mu.unwrap_or(match cfg.experiment {
        ExperimentKind::Factorization => 1.0 / (9.0 * p.order as f64 - 5.0),
        _ => 0.5,
    });
    let mut solve_cfg = SolveConfig::new(feasible_ranks(&dims, p.fit_rank));
    solve_cfg.mu = mu;
    solve_cfg.max_iters = cfg.max_iters;
    solve_cfg.grad_tol = cfg.grad_tol;
    solve_cfg.energy_mode = match cfg.energy_mode {
        EnergyChoice::Exact => EnergyMode::Exact,
        EnergyChoice::Estimated => EnergyMode::Estimated,
        EnergyChoice::Fixed => EnergyMode::Fixed(cfg.energy_value.unwrap_or(1.0)),
    };
    solve_cfg.seed = derive_seed(seed, &[4, p.fit_rank as u64]);
    solve_cfg.trace_every = cfg.trace_every();
    solve_cfg.trace_dist2 = cfg.trace_dist2;
    solve_cfg.record_wall_time = cfg.timing;
    solve_cfg.init = match cfg.init_choice() {
        InitChoice::Spectral => InitMode::Spectral,
        InitChoice::Random => InitMode::Random,
        InitChoice::Perturbed => InitMode::Provided,
    };
    let noise_seed = derive_seed(seed, &[3, p.m as u64, p.gamma2.to_bits()]);
    let op_seed = derive_seed(seed, &[2, p.m as u64]);

    let (x, trace) = match cfg.experiment {
        ExperimentKind::Factorization => {
            let mut target = truth.to_dense()?;
            if p.gamma2 > 0.0 {
                let noisy = add_noise(target.data(), p.gamma2.sqrt(), noise_seed)?;
                target = DenseTensor::new(dims.clone(), noisy)?;
            }
            let initial = if solve_cfg.init == InitMode::Provided {
                if solve_cfg.ranks != truth.bond_ranks() {
                    return Err(TtError::Config(
                        "the perturbed init needs fit ranks equal to the true ranks".into(),
                    ));
                }
                Some(perturb_cores(&truth, cfg.perturbation, derive_seed(seed, &[5]))?)
            } else {
                None
            };
            solve(
                Problem::Factorization { target: &target },
                &solve_cfg,
                initial.as_ref(),
                Some(&truth),
            )?
        }
        ExperimentKind::RipProbe => unreachable!("rip probes do not solve"),
        kind => {
            let op = if kind.is_completion() {
                let numel = dims.iter().product::<usize>();
                SensingOperator::entry_mask(&dims, p.m.min(numel), op_seed)?
            } else {
                match cfg.storage {
                    Some(storage) => {
                        SensingOperator::ensemble_with_storage(&dims, p.m, op_seed, cfg.distribution, storage)?
                    }
                    None => SensingOperator::gaussian_ensemble(&dims, p.m, op_seed, cfg.distribution)?,
                }
            };
            let clean = op.apply_tt(&truth)?;
            let y = add_noise(&clean, p.gamma2.sqrt(), noise_seed)?;
            let problem = if kind.is_completion() {
                Problem::Completion { op: &op, y: &y }
            } else {
                Problem::Sensing { op: &op, y: &y }
            };
            solve(problem, &solve_cfg, None, Some(&truth))?
        }
    };
    Ok((tt_distance(&x, &truth)?, trace))
}

fn summarize(cfg: &ExperimentConfig, p: &GridPoint, records: &[ResultRecord]) -> GridSummary {
    let n = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let errors: Vec<f64> = records.iter().map(|r| r.tensor_error).collect();
    let mean_error = errors.iter().sum::<f64>() / n as f64;
    let mean_error2 = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median_error = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let rates: Vec<f64> = records.iter().filter_map(|r| r.rate).collect();
    GridSummary {
        experiment: cfg.experiment,
        point: *p,
        trials: n,
        successes,
        success_rate: successes as f64 / n as f64,
        mean_error,
        mean_error2,
        median_error,
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n as f64,
        mean_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
    }
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TtError::Config(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

/// Runs the whole grid. Individual trial failures are recorded, not raised.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let grid = cfg.grid();
    if cfg.experiment == ExperimentKind::RipProbe {
        return with_threads(cfg.threads, || run_rip(cfg, &grid))?;
    }
    let trials = cfg.trials();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..trials).map(move |t| (g, t))).collect();
    let outcomes = with_threads(cfg.threads, || {
        map_indexed(jobs.len(), |j| {
            let (g, t) = jobs[j];
            run_trial(cfg, &grid[g], t)
        })
    })?;
    let mut out = ExperimentOutput::default();
    for o in outcomes {
        if let Some(trace) = o.trace {
            out.traces.push((o.record.point.grid_id, o.record.trial, trace));
        }
        out.records.push(o.record);
    }
    for p in &grid {
        let recs: Vec<ResultRecord> = out
            .records
            .iter()
            .filter(|r| r.point.grid_id == p.grid_id)
            .cloned()
            .collect();
        out.summaries.push(summarize(cfg, p, &recs));
    }
    Ok(out)
}

fn run_rip(cfg: &ExperimentConfig, grid: &[GridPoint]) -> Result<ExperimentOutput> {
    let rip = map_indexed(grid.len(), |g| -> Result<RipRecord> {
        let p = grid[g];
        let dims = vec![p.dim; p.order];
        let seed = derive_seed(
            cfg.base_seed,
            &[p.order as u64, p.dim as u64, p.rank as u64, p.m as u64],
        );
        let op = SensingOperator::gaussian_ensemble(&dims, p.m, derive_seed(seed, &[2]), cfg.distribution)?;
        let ranks = vec![p.rank; p.order - 1];
        let est = estimate_rip(&op, &ranks, cfg.rip_trials, derive_seed(seed, &[6]))?;
        Ok(RipRecord {
            point: p,
            trials: est.trials,
            probe_ranks: est.ranks,
            delta_hat: est.delta_hat,
            min_ratio: est.min_ratio,
            max_ratio: est.max_ratio,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput {
        rip,
        ..Default::default()
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn point_fields(p: &GridPoint) -> String {
    format!(
        "{},{},{},{},{},{},{:e}",
        p.grid_id, p.order, p.dim, p.rank, p.fit_rank, p.m, p.gamma2
    )
}

pub fn results_csv(records: &[ResultRecord]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{},{},{},{},{},{},{}",
            r.experiment.name(),
            point_fields(&r.point),
            r.trial,
            r.seed,
            r.tensor_error,
            r.success as u8,
            r.iterations,
            r.status.as_str(),
            opt(r.init_error),
            opt(r.rate),
            opt(r.wall_time_s),
            r.trace_file.as_deref().unwrap_or("")
        );
    }
    s
}

pub fn summary_csv(summaries: &[GridSummary]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for g in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
            g.experiment.name(),
            point_fields(&g.point),
            g.trials,
            g.successes,
            g.success_rate,
            g.mean_error,
            g.mean_error2,
            g.median_error,
            g.mean_iterations,
            opt(g.mean_rate)
        );
    }
    s
}

pub fn rip_csv(rip: &[RipRecord]) -> String {
    let mut s = String::from(RIP_HEADER);
    s.push('\n');
    for r in rip {
        let ranks: Vec<String> = r.probe_ranks.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:e},{:e},{:e}",
            r.point.grid_id,
            r.point.order,
            r.point.dim,
            r.point.rank,
            r.point.m,
            r.trials,
            ranks.join(" "),
            r.delta_hat,
            r.min_ratio,
            r.max_ratio
        );
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    trial_seeds: Vec<String>,
}

/// Writes `results.csv`, `summary.csv` (or `rip.csv`), `traces/*.csv` and
/// `manifest.toml` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if cfg.experiment == ExperimentKind::RipProbe {
        fs::write(dir.join("rip.csv"), rip_csv(&out.rip))?;
    } else {
        fs::write(dir.join("results.csv"), results_csv(&out.records))?;
        fs::write(dir.join("summary.csv"), summary_csv(&out.summaries))?;
        if !out.traces.is_empty() {
            fs::create_dir_all(dir.join("traces"))?;
        }
        for (g, t, trace) in &out.traces {
            let mut w = BufWriter::new(fs::File::create(dir.join(trace_name(*g, *t)))?);
            trace.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        trial_seeds: out.records.iter().map(|r| r.seed.to_string()).collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| TtError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}
