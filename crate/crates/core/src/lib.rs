//! Tensor-train recovery toolkit.
//!
//! Low-TT-rank tensors are represented by left-orthogonal cores and recovered
//! from full observations, linear measurements or sampled entries with a
//! hybrid Riemannian gradient descent: interior cores move on Stiefel
//! manifolds, the last core takes plain gradient steps.
//!
//! ```
//! use rand::SeedableRng;
//! use ttrecover::{svd::tt_svd, tensor::TtTensor};
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let x = TtTensor::random(&[3, 4, 3], &[2, 2], &mut rng).unwrap();
//! let dense = x.to_dense().unwrap();
//! let y = tt_svd(&dense, &[2, 2]).unwrap();
//! let err = y.to_dense().unwrap().sub(&dense).unwrap().norm();
//! assert!(err < 1e-10 * dense.norm());
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metric;
mod par;
pub mod rgd;
pub mod sensing;
pub mod stiefel;
pub mod svd;
pub mod tensor;

pub use error::{Result, TtError};
pub use rgd::{solve, EnergyMode, InitMode, Problem, SolveConfig, SolveTrace};
pub use sensing::{Distribution, SensingOperator};
pub use tensor::{DenseTensor, TtTensor};
