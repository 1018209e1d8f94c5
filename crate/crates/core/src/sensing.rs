//! Linear measurement operators `X ↦ (⟨A_1, X⟩, .., ⟨A_m, X⟩)`.
//!
//! Two kinds are supported: dense ensembles whose `A_k` have i.i.d. entries,
//! and entry masks that observe `m` distinct entries. Every random draw is
//! keyed by an explicit seed. Measurement `A_k` of an ensemble is produced by
//! a ChaCha8 generator seeded with `seed` on stream `k`, so any `A_k` can be
//! regenerated on its own; the streamed and materialized storages share that
//! generator and the same contraction code, hence agree bitwise.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};
use crate::par::map_indexed;
use crate::tensor::{contract_flat, feasible_ranks, unravel_index, DenseTensor, TtTensor, DEFAULT_ELEMENT_BUDGET};

/// Ensembles up to this many stored scalars are materialized by default.
pub const AUTO_MATERIALIZE_LIMIT: usize = 1 << 24;

/// Number of measurements summed together before partial sums are combined.
const ADJOINT_BLOCK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    DenseEnsemble,
    EntryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Storage {
    Materialized,
    Streamed,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$t>::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = TtError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)+
                    _ => Err(TtError::Config(format!("unknown {} `{s}`", stringify!($t)))),
                }
            }
        }
    };
}

text_enum!(OperatorKind { DenseEnsemble => "dense-ensemble", EntryMask => "entry-mask" });
text_enum!(Distribution { Gaussian => "gaussian", Rademacher => "rademacher" });
text_enum!(Storage { Materialized => "materialized", Streamed => "streamed" });

#[derive(Debug, Clone)]
pub struct SensingOperator {
    kind: OperatorKind,
    dims: Vec<usize>,
    numel: usize,
    m: usize,
    seed: u64,
    distribution: Distribution,
    storage: Storage,
    /// Materialized ensemble, `A_k` at `k * numel ..`.
    matrices: Option<Vec<f64>>,
    /// Sorted linear indices of an entry mask.
    mask: Vec<usize>,
}

fn numel_of(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(TtError::domain(format!("invalid dims {dims:?}")));
    }
    let n: u128 = dims.iter().map(|&d| d as u128).product();
    if n > DEFAULT_ELEMENT_BUDGET as u128 {
        return Err(TtError::Resource {
            needed: n,
            budget: DEFAULT_ELEMENT_BUDGET,
        });
    }
    Ok(n as usize)
}

fn measurement_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

fn fill(distribution: Distribution, seed: u64, k: usize, buf: &mut [f64]) {
    let mut rng = measurement_rng(seed, k);
    match distribution {
        Distribution::Gaussian => buf.iter_mut().for_each(|x| *x = rng.sample(StandardNormal)),
        Distribution::Rademacher => buf
            .iter_mut()
            .for_each(|x| *x = if rng.random::<bool>() { 1.0 } else { -1.0 }),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

impl SensingOperator {
    /// Dense ensemble with i.i.d. zero-mean unit-variance entries. Storage is
    /// materialized when it fits [`AUTO_MATERIALIZE_LIMIT`], streamed otherwise.
    pub fn gaussian_ensemble(dims: &[usize], m: usize, seed: u64, distribution: Distribution) -> Result<Self> {
        let numel = numel_of(dims)?;
        let storage = if (m as u128) * (numel as u128) <= AUTO_MATERIALIZE_LIMIT as u128 {
            Storage::Materialized
        } else {
            Storage::Streamed
        };
        Self::ensemble_with_storage(dims, m, seed, distribution, storage)
    }

    pub fn ensemble_with_storage(
        dims: &[usize],
        m: usize,
        seed: u64,
        distribution: Distribution,
        storage: Storage,
    ) -> Result<Self> {
        let numel = numel_of(dims)?;
        if m == 0 {
            return Err(TtError::domain("at least one measurement is required"));
        }
        let matrices = match storage {
            Storage::Streamed => None,
            Storage::Materialized => {
                let total = (m as u128) * (numel as u128);
                if total > DEFAULT_ELEMENT_BUDGET as u128 {
                    return Err(TtError::Resource {
                        needed: total,
                        budget: DEFAULT_ELEMENT_BUDGET,
                    });
                }
                let rows = map_indexed(m, |k| {
                    let mut buf = vec![0.0; numel];
                    fill(distribution, seed, k, &mut buf);
                    buf
                });
                Some(rows.concat())
            }
        };
        Ok(SensingOperator {
            kind: OperatorKind::DenseEnsemble,
            dims: dims.to_vec(),
            numel,
            m,
            seed,
            distribution,
            storage,
            matrices,
            mask: Vec::new(),
        })
    }

    /// Observes `m` distinct entries drawn uniformly without replacement.
    pub fn entry_mask(dims: &[usize], m: usize, seed: u64) -> Result<Self> {
        let numel = numel_of(dims)?;
        if m == 0 || m > numel {
            return Err(TtError::domain(format!(
                "cannot sample {m} distinct entries out of {numel}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = rand::seq::index::sample(&mut rng, numel, m).into_vec();
        mask.sort_unstable();
        Ok(SensingOperator {
            kind: OperatorKind::EntryMask,
            dims: dims.to_vec(),
            numel,
            m,
            seed,
            distribution: Distribution::Gaussian,
            storage: Storage::Materialized,
            matrices: None,
            mask,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn storage(&self) -> Storage {
        self.storage
    }

    /// Sorted observed linear indices (empty for ensembles).
    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    /// Factor `c` making `c ‖A(X)‖²` an unbiased estimate of `‖X‖_F²`:
    /// `1/m` for ensembles, `Πd/m` for entry masks.
    pub fn isometry_scale(&self) -> f64 {
        match self.kind {
            OperatorKind::DenseEnsemble => 1.0 / self.m as f64,
            OperatorKind::EntryMask => self.numel as f64 / self.m as f64,
        }
    }

    /// Calls `f` with `A_k` as a flat array in linear order.
    pub fn with_measurement<T>(&self, k: usize, f: impl FnOnce(&[f64]) -> T) -> T {
        assert!(k < self.m, "measurement {k} out of range");
        match (&self.matrices, self.kind) {
            (Some(all), _) => f(&all[k * self.numel..(k + 1) * self.numel]),
            (None, OperatorKind::DenseEnsemble) => {
                let mut buf = vec![0.0; self.numel];
                fill(self.distribution, self.seed, k, &mut buf);
                f(&buf)
            }
            (None, OperatorKind::EntryMask) => {
                let mut buf = vec![0.0; self.numel];
                buf[self.mask[k]] = 1.0;
                f(&buf)
            }
        }
    }

    /// `A_k` as a dense tensor.
    pub fn measurement(&self, k: usize) -> Result<DenseTensor> {
        if k >= self.m {
            return Err(TtError::domain(format!("measurement {k} out of range 0..{}", self.m)));
        }
        self.with_measurement(k, |a| DenseTensor::new(self.dims.clone(), a.to_vec()))
    }

    fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if dims != self.dims.as_slice() {
            return Err(TtError::domain(format!(
                "operator dims {:?}, input dims {dims:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Measures a TT tensor without densifying it.
    pub fn apply_tt(&self, x: &TtTensor) -> Result<Vec<f64>> {
        self.check_dims(&x.dims())?;
        Ok(match self.kind {
            OperatorKind::DenseEnsemble => map_indexed(self.m, |k| self.with_measurement(k, |a| contract_flat(a, x))),
            OperatorKind::EntryMask => self
                .mask
                .iter()
                .map(|&j| x.eval_unchecked(unravel_index(&self.dims, j)))
                .collect(),
        })
    }

    pub fn apply_dense(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        self.check_dims(x.shape())?;
        Ok(match self.kind {
            OperatorKind::DenseEnsemble => map_indexed(self.m, |k| self.with_measurement(k, |a| dot(a, x.data()))),
            OperatorKind::EntryMask => self.mask.iter().map(|&j| x.data()[j]).collect(),
        })
    }

    /// `A*(y) = Σ_k y_k A_k`. Ensembles are summed in fixed blocks of
    /// measurements whose partial sums are added in block order, so the result
    /// does not depend on the thread count.
    pub fn adjoint(&self, y: &[f64]) -> Result<DenseTensor> {
        if y.len() != self.m {
            return Err(TtError::domain(format!(
                "expected {} measurements, got {}",
                self.m,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.numel];
        match self.kind {
            OperatorKind::EntryMask => {
                for (&j, &v) in self.mask.iter().zip(y) {
                    out[j] = v;
                }
            }
            OperatorKind::DenseEnsemble => {
                let blocks = self.m.div_ceil(ADJOINT_BLOCK);
                let partials = map_indexed(blocks, |b| {
                    let mut acc = vec![0.0; self.numel];
                    let end = ((b + 1) * ADJOINT_BLOCK).min(self.m);
                    for k in b * ADJOINT_BLOCK..end {
                        let yk = y[k];
                        self.with_measurement(k, |a| {
                            for (o, v) in acc.iter_mut().zip(a) {
                                *o += yk * v;
                            }
                        });
                    }
                    acc
                });
                for p in partials {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += v;
                    }
                }
            }
        }
        DenseTensor::new(self.dims.clone(), out)
    }

    /// Self-contained description sufficient to rebuild the operator.
    pub fn descriptor(&self) -> OperatorDescriptor {
        OperatorDescriptor {
            kind: self.kind,
            dims: self.dims.clone(),
            m: self.m,
            seed: self.seed,
            distribution: self.distribution,
            storage: self.storage,
            gamma: 0.0,
            noise_seed: 0,
        }
    }

    pub fn from_descriptor(d: &OperatorDescriptor) -> Result<Self> {
        match d.kind {
            OperatorKind::DenseEnsemble => Self::ensemble_with_storage(&d.dims, d.m, d.seed, d.distribution, d.storage),
            OperatorKind::EntryMask => Self::entry_mask(&d.dims, d.m, d.seed),
        }
    }
}

/// Key=value sidecar of a measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    pub kind: OperatorKind,
    pub dims: Vec<usize>,
    pub m: usize,
    #[serde(with = "crate::io::u64_text")]
    pub seed: u64,
    pub distribution: Distribution,
    pub storage: Storage,
    /// Noise standard deviation added to the stored measurements.
    pub gamma: f64,
    #[serde(with = "crate::io::u64_text")]
    pub noise_seed: u64,
}

/// `y + ε` with `ε ~ N(0, γ² I)` drawn from `seed`.
pub fn add_noise(y: &[f64], gamma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(TtError::domain(format!(
            "noise level must be finite and nonnegative, got {gamma}"
        )));
    }
    if gamma == 0.0 {
        return Ok(y.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(y.iter()
        .map(|&v| v + gamma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RipEstimate {
    pub delta_hat: f64,
    pub trials: usize,
    /// Bond ranks of the probes after clamping to what the dims admit.
    pub ranks: Vec<usize>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `c ‖A(X_t)‖²` for each probe, `c` the operator's isometry scale.
    pub ratios: Vec<f64>,
}

/// Random unit-norm TT probe number `t`; probes are independent of `trials`.
pub fn rip_probe(dims: &[usize], ranks: &[usize], seed: u64, t: usize) -> Result<TtTensor> {
    let mut rng = measurement_rng(seed, t);
    let x = TtTensor::random(dims, ranks, &mut rng)?;
    let norm = x.norm();
    Ok(x.scaled(1.0 / norm))
}

/// Empirical restricted isometry constant over `trials` random unit-norm
/// TT tensors with bond ranks `min(r_i, feasible)`. Only a lower bound on the
/// true constant.
pub fn estimate_rip(op: &SensingOperator, ranks: &[usize], trials: usize, seed: u64) -> Result<RipEstimate> {
    if trials == 0 {
        return Err(TtError::domain("at least one trial is required"));
    }
    let dims = op.dims().to_vec();
    if ranks.len() + 1 != dims.len() {
        return Err(TtError::domain(format!(
            "{} ranks given for order {}",
            ranks.len(),
            dims.len()
        )));
    }
    let clamped: Vec<usize> = ranks
        .iter()
        .zip(feasible_ranks(&dims, usize::MAX))
        .map(|(&r, cap)| r.clamp(1, cap))
        .collect();
    let scale = op.isometry_scale();
    let ratios = map_indexed(trials, |t| -> Result<f64> {
        let x = rip_probe(&dims, &clamped, seed, t)?;
        let y = op.apply_tt(&x)?;
        Ok(scale * y.iter().map(|v| v * v).sum::<f64>())
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RipEstimate {
        delta_hat: (1.0 - min_ratio).max(max_ratio - 1.0),
        trials,
        ranks: clamped,
        min_ratio,
        max_ratio,
        ratios,
    })
}
