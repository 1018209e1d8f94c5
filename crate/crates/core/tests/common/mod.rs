#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ttrecover::linalg::{polar_factor, Matrix};
use ttrecover::svd::left_orthogonalize;
use ttrecover::tensor::{feasible_ranks, TtTensor};

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn stiefel_point(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    polar_factor(&gaussian(rows, cols, rng), 0.0).expect("gaussian matrices have full rank")
}

/// Random left-orthogonal TT with the given shape and `‖X‖_F = norm`.
pub fn random_ortho(dims: &[usize], rank: usize, norm: f64, rng: &mut ChaCha8Rng) -> TtTensor {
    let ranks = feasible_ranks(dims, rank);
    let x = left_orthogonalize(&TtTensor::random(dims, &ranks, rng).unwrap());
    let n = x.norm();
    x.scaled(norm / n)
}

/// Random small shape: order in `orders`, dims in `2..=max_dim`.
pub fn random_dims(orders: std::ops::RangeInclusive<usize>, max_dim: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rng.random_range(orders);
    (0..n).map(|_| rng.random_range(2..=max_dim)).collect()
}

/// Sets the last core so that `‖L(X_N)‖ = norm`.
pub fn with_last_norm(x: &TtTensor, norm: f64) -> TtTensor {
    let cur = x.core(x.order() - 1).left_unfolding().norm();
    x.scaled(norm / cur)
}

/// `Σ_i ⟨a_i, b_i⟩` over matching core-shaped matrices.
pub fn pair_inner(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// `x` with every `L(X_i)` moved by `h · dir_i`, orthonormality ignored.
pub fn shifted(x: &TtTensor, dir: &[Matrix], h: f64) -> TtTensor {
    let mut out = x.clone();
    for (i, d) in dir.iter().enumerate() {
        let l = x.core(i).left_unfolding() + d * h;
        out.set_left_unfolding(i, l).unwrap();
    }
    out
}

pub fn core_directions(x: &TtTensor, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    x.cores()
        .iter()
        .map(|c| {
            let l = c.left_unfolding();
            gaussian(l.nrows(), l.ncols(), rng)
        })
        .collect()
}
