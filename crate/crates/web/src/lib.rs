//! Browser bindings. Each export wraps a plain Rust function so the same code
//! path is tested natively.

use ttrecover::harness::{generate_ground_truth, run_experiment, ExperimentConfig, ExperimentKind};
use ttrecover::rgd::{solve, Problem, SolveConfig};
use ttrecover::sensing::{estimate_rip, Distribution, SensingOperator};
use ttrecover::{Result, TtError};
use wasm_bindgen::prelude::*;

/// Cap on the dense element count of a demo tensor, keeps the page responsive.
pub const MAX_ENTRIES: usize = 1 << 12;

fn check_shape(order: usize, dim: usize, rank: usize) -> Result<()> {
    if order < 2 || dim == 0 || rank == 0 {
        return Err(TtError::Config("need order >= 2 and positive dim and rank".into()));
    }
    match dim.checked_pow(order as u32) {
        Some(n) if n <= MAX_ENTRIES => Ok(()),
        _ => Err(TtError::Config(format!("d^N must be at most {MAX_ENTRIES}"))),
    }
}

/// Tensor error per iteration of one sensing run from spectral init.
pub fn sensing_errors(
    order: usize,
    dim: usize,
    rank: usize,
    m: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    check_shape(order, dim, rank)?;
    let truth = generate_ground_truth(order, dim, rank, seed)?;
    let op = SensingOperator::gaussian_ensemble(&truth.dims(), m, seed.wrapping_add(1), Distribution::Gaussian)?;
    let y = op.apply_tt(&truth)?;
    let mut cfg = SolveConfig::new(truth.bond_ranks());
    cfg.max_iters = max_iters.max(1);
    let (_, trace) = solve(Problem::Sensing { op: &op, y: &y }, &cfg, None, Some(&truth))?;
    Ok(trace.records.iter().filter_map(|r| r.tensor_error).collect())
}

/// Success rate at each measurement count.
pub fn success_rates(
    order: usize,
    dim: usize,
    rank: usize,
    ms: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_shape(order, dim, rank)?;
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::Phase,
        orders: vec![order],
        dims: vec![dim],
        ranks: vec![rank],
        measurements: ms.to_vec(),
        trials: Some(trials),
        base_seed: seed,
        trace_every: Some(0),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&cfg)?;
    Ok(out.summaries.iter().map(|s| s.success_rate).collect())
}

/// Ratios `(1/m)‖A(X)‖² / ‖X‖²` over random TT tensors of the given rank.
pub fn rip_samples(order: usize, dim: usize, rank: usize, m: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    check_shape(order, dim, rank)?;
    let dims = vec![dim; order];
    let op = SensingOperator::gaussian_ensemble(&dims, m, seed, Distribution::Gaussian)?;
    Ok(estimate_rip(&op, &vec![rank; order - 1], trials.max(1), seed.wrapping_add(1))?.ratios)
}

fn js(e: TtError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn sensing_demo(
    order: usize,
    dim: usize,
    rank: usize,
    m: usize,
    seed: u32,
    max_iters: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    sensing_errors(order, dim, rank, m, seed as u64, max_iters).map_err(js)
}

#[wasm_bindgen]
pub fn phase_row(
    order: usize,
    dim: usize,
    rank: usize,
    ms: &[u32],
    trials: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    let ms: Vec<usize> = ms.iter().map(|&m| m as usize).collect();
    success_rates(order, dim, rank, &ms, trials, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn rip_ratios(
    order: usize,
    dim: usize,
    rank: usize,
    m: usize,
    trials: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    rip_samples(order, dim, rank, m, trials, seed as u64).map_err(js)
}
