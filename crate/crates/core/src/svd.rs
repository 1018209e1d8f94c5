//! TT-SVD, left-orthogonalization and unfolding spectra.

use crate::error::{Result, TtError};
use crate::linalg::{complete_orthonormal, singular_values, thin_svd, Matrix};
use crate::tensor::{tensor_unfold, Core, DenseTensor, TtTensor};

/// Extreme singular values over the unfoldings `X^<i>`, `i = 1..N-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralStats {
    /// `min_i σ_{r_i}(X^<i>)`
    pub sigma_min: f64,
    /// `max_i σ_1(X^<i>)`
    pub sigma_max: f64,
    pub kappa: f64,
}

fn check_ranks(dims: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() + 1 != dims.len() {
        return Err(TtError::domain(format!(
            "expected {} bond ranks for order {}, got {}",
            dims.len().saturating_sub(1),
            dims.len(),
            ranks.len()
        )));
    }
    for (i, &r) in ranks.iter().enumerate() {
        let left: u128 = dims[..=i].iter().map(|&d| d as u128).product();
        let right: u128 = dims[i + 1..].iter().map(|&d| d as u128).product();
        if r == 0 || r as u128 > left.min(right) {
            return Err(TtError::domain(format!(
                "rank r_{} = {r} outside 1..={}",
                i + 1,
                left.min(right)
            )));
        }
    }
    Ok(())
}

/// Sequential truncated SVD of a dense tensor at the given bond ranks.
///
/// The result is left-orthogonal and always carries exactly the requested
/// ranks. When an unfolding has fewer singular directions than requested the
/// basis is completed with further orthonormal columns (their coefficients
/// are zero); when the core itself has fewer rows than the requested rank,
/// the surplus columns are zero.
pub fn tt_svd(dense: &DenseTensor, ranks: &[usize]) -> Result<TtTensor> {
    let dims = dense.shape().to_vec();
    check_ranks(&dims, ranks)?;
    let n = dims.len();
    let mut cores = Vec::with_capacity(n);
    let mut rest: usize = dims.iter().product();
    let mut left = 1usize;
    let mut carry: Vec<f64> = dense.data().to_vec();
    for i in 0..n - 1 {
        let rows = left * dims[i];
        rest /= dims[i];
        let m = Matrix::from_column_slice(rows, rest, &carry);
        let r = ranks[i];
        let svd = thin_svd(&m);
        let keep = r.min(svd.u.ncols());
        let mut q = svd.u.columns(0, keep).into_owned();
        if keep < r {
            q = complete_orthonormal(&q, r.min(rows));
            if q.ncols() < r {
                q = q.resize_horizontally(r, 0.0);
            }
        }
        let next = q.transpose() * &m;
        carry = next.as_slice().to_vec();
        cores.push(Core::from_left_unfolding(left, dims[i], q)?);
        left = r;
    }
    let last = Matrix::from_column_slice(left * dims[n - 1], 1, &carry);
    cores.push(Core::from_left_unfolding(left, dims[n - 1], last)?);
    TtTensor::new(cores)
}

/// QR sweep from the first core to the last, pushing each triangular factor
/// into the next core. Diagonals of the triangular factors are made
/// nonnegative so the output is unique for full-rank input.
pub fn left_orthogonalize(tt: &TtTensor) -> TtTensor {
    let n = tt.order();
    let mut cores: Vec<Core> = Vec::with_capacity(n);
    let mut carry: Option<Matrix> = None;
    for (i, core) in tt.cores().iter().enumerate() {
        let unfolding = match &carry {
            None => core.left_unfolding().clone(),
            Some(r) => absorb_left(r, core),
        };
        let left = unfolding.nrows() / core.dim();
        if i == n - 1 {
            cores.push(Core::from_left_unfolding(left, core.dim(), unfolding).expect("shape kept"));
            break;
        }
        let (q, r) = sign_fixed_qr(unfolding);
        carry = Some(r);
        cores.push(Core::from_left_unfolding(left, core.dim(), q).expect("shape kept"));
    }
    TtTensor::new(cores).expect("ranks kept")
}

/// `L` of the core with every slice replaced by `R X(s)`.
fn absorb_left(r: &Matrix, core: &Core) -> Matrix {
    let left = r.nrows();
    let mut out = Matrix::zeros(left * core.dim(), core.right_rank());
    for s in 0..core.dim() {
        out.rows_mut(s * left, left).copy_from(&(r * core.slice(s)));
    }
    out
}

/// Thin QR with nonnegative `diag(R)`. A wide input gives a zero-padded `Q`
/// and `R` so that `Q` keeps the input's column count.
fn sign_fixed_qr(m: Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = m.shape();
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..rows.min(cols) {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
            r.row_mut(k).neg_mut();
        }
    }
    if rows < cols {
        q = q.resize_horizontally(cols, 0.0);
        r = r.resize_vertically(cols, 0.0);
    }
    (q, r)
}

/// `‖a − b‖_F`, evaluated on the TT difference rather than through the Gram
/// expansion so that small distances keep their relative accuracy.
pub fn tt_distance(a: &TtTensor, b: &TtTensor) -> Result<f64> {
    let diff = a.add(&b.neg())?;
    let ortho = left_orthogonalize(&diff);
    Ok(ortho.core(ortho.order() - 1).left_unfolding().norm())
}

pub fn spectral_stats(dense: &DenseTensor, ranks: &[usize]) -> Result<SpectralStats> {
    check_ranks(dense.shape(), ranks)?;
    let mut sigma_min = f64::INFINITY;
    let mut sigma_max = 0.0f64;
    for (i, &r) in ranks.iter().enumerate() {
        let s = singular_values(&tensor_unfold(dense, i + 1)?.matrix);
        sigma_max = sigma_max.max(s[0]);
        sigma_min = sigma_min.min(s.get(r - 1).copied().unwrap_or(0.0));
    }
    if ranks.is_empty() {
        let norm = dense.norm();
        sigma_min = norm;
        sigma_max = norm;
    }
    Ok(SpectralStats {
        sigma_min,
        sigma_max,
        kappa: sigma_max / sigma_min,
    })
}

/// `max_{i<N} ‖L(X_i)ᵀ L(X_i) − I‖_F`.
pub fn orthogonality_defect(tt: &TtTensor) -> f64 {
    let n = tt.order();
    tt.cores()[..n - 1]
        .iter()
        .map(|c| crate::linalg::orthonormality_residual(c.left_unfolding()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::feasible_ranks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rel_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.sub(b).unwrap().norm() / b.norm().max(1e-300)
    }

    #[test]
    fn exact_rank_round_trip() {
        let tt = left_orthogonalize(&TtTensor::random(&[3, 4, 3, 2], &[2, 3, 2], &mut rng(1)).unwrap());
        let dense = tt.to_dense().unwrap();
        let back = tt_svd(&dense, &[2, 3, 2]).unwrap();
        assert!(rel_diff(&back.to_dense().unwrap(), &dense) <= 1e-10);
        assert!(orthogonality_defect(&back) <= 1e-12);
    }

    #[test]
    fn zero_tensor_gives_zero_last_core() {
        let dense = DenseTensor::zeros(vec![2, 3, 2]).unwrap();
        let tt = tt_svd(&dense, &[2, 2]).unwrap();
        assert!(tt.core(2).left_unfolding().iter().all(|&x| x == 0.0));
        assert!(tt.to_dense().unwrap().data().iter().all(|&x| x == 0.0));
        assert!(orthogonality_defect(&tt) <= 1e-12);
    }

    #[test]
    fn truncation_obeys_unfolding_tail_bound() {
        let dense = DenseTensor::random_normal(vec![3, 3, 3, 3], &mut rng(2)).unwrap();
        let ranks = [2, 3, 2];
        let approx = tt_svd(&dense, &ranks).unwrap().to_dense().unwrap();
        let err = dense.sub(&approx).unwrap().norm();
        let mut tail = 0.0;
        for (i, &r) in ranks.iter().enumerate() {
            let s = singular_values(&tensor_unfold(&dense, i + 1).unwrap().matrix);
            tail += s[r..].iter().map(|x| x * x).sum::<f64>();
        }
        assert!(err <= tail.sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn rank_above_unfolding_bound_is_rejected() {
        let dense = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(matches!(tt_svd(&dense, &[3, 2]), Err(TtError::Domain(_))));
        assert!(matches!(tt_svd(&dense, &[0, 1]), Err(TtError::Domain(_))));
        assert!(matches!(tt_svd(&dense, &[2]), Err(TtError::Domain(_))));
    }

    #[test]
    fn over_parameterized_ranks_keep_shape_and_value() {
        let tt = TtTensor::random(&[4, 4, 4], &[2, 2], &mut rng(3)).unwrap();
        let dense = tt.to_dense().unwrap();
        let wide = tt_svd(&dense, &[4, 4]).unwrap();
        assert_eq!(wide.ranks(), vec![1, 4, 4, 1]);
        assert!(orthogonality_defect(&wide) <= 1e-12);
        assert!(rel_diff(&wide.to_dense().unwrap(), &dense) <= 1e-10);
    }

    #[test]
    fn core_narrower_than_rank_is_zero_padded() {
        let dims = [2, 3, 3, 2];
        let tt = TtTensor::random(&dims, &[1, 3, 2], &mut rng(4)).unwrap();
        let dense = tt.to_dense().unwrap();
        let wide = tt_svd(&dense, &[1, 4, 2]).unwrap();
        assert_eq!(wide.ranks(), vec![1, 1, 4, 2, 1]);
        assert!(rel_diff(&wide.to_dense().unwrap(), &dense) <= 1e-10);
    }

    #[test]
    fn orthogonalize_fixed_point() {
        let tt = tt_svd(
            &TtTensor::random(&[3, 3, 3], &[2, 2], &mut rng(5))
                .unwrap()
                .to_dense()
                .unwrap(),
            &[2, 2],
        )
        .unwrap();
        let again = left_orthogonalize(&tt);
        assert!(rel_diff(&again.to_dense().unwrap(), &tt.to_dense().unwrap()) <= 1e-12);
        assert!(orthogonality_defect(&again) <= 1e-12);
    }

    #[test]
    fn orthogonalize_absorbs_gauge_scaling() {
        let tt = TtTensor::random(&[3, 4, 3], &[2, 2], &mut rng(6)).unwrap();
        let mut scaled = tt.clone();
        scaled.set_left_unfolding(0, tt.core(0).left_unfolding() * 7.0).unwrap();
        scaled.set_left_unfolding(1, tt.core(1).left_unfolding() / 7.0).unwrap();
        let out = left_orthogonalize(&scaled);
        assert!(rel_diff(&out.to_dense().unwrap(), &tt.to_dense().unwrap()) <= 1e-12);
        assert!(orthogonality_defect(&out) <= 1e-12);
        let norm = tt.to_dense().unwrap().norm();
        assert!((out.core(2).left_unfolding().norm() - norm).abs() <= 1e-12 * norm);
    }

    #[test]
    fn distance_matches_dense() {
        let a = TtTensor::random(&[3, 3, 3], &[2, 2], &mut rng(7)).unwrap();
        let b = TtTensor::random(&[3, 3, 3], &[2, 3], &mut rng(8)).unwrap();
        let want = a.to_dense().unwrap().sub(&b.to_dense().unwrap()).unwrap().norm();
        assert!((tt_distance(&a, &b).unwrap() - want).abs() <= 1e-12 * want);
        assert!(tt_distance(&a, &a).unwrap() <= 1e-14 * a.norm());
    }

    #[test]
    fn stats_of_normalized_rank_one() {
        let u = [0.6, 0.8];
        let v = [0.0, 1.0, 0.0];
        let dense = DenseTensor::from_fn(vec![2, 3], |ix| u[ix[0]] * v[ix[1]]).unwrap();
        let st = spectral_stats(&dense, &[1]).unwrap();
        assert!((st.sigma_min - 1.0).abs() < 1e-14);
        assert!((st.sigma_max - 1.0).abs() < 1e-14);
        assert!((st.kappa - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stats_are_homogeneous() {
        let dense = TtTensor::random(&[3, 3, 3], &[2, 2], &mut rng(9))
            .unwrap()
            .to_dense()
            .unwrap();
        let a = spectral_stats(&dense, &[2, 2]).unwrap();
        let b = spectral_stats(&dense.scaled(-3.0), &[2, 2]).unwrap();
        assert!((b.sigma_min - 3.0 * a.sigma_min).abs() <= 1e-12 * b.sigma_min);
        assert!((b.sigma_max - 3.0 * a.sigma_max).abs() <= 1e-12 * b.sigma_max);
        assert!((b.kappa - a.kappa).abs() <= 1e-10 * a.kappa);
        assert!(a.sigma_min > 0.0 && a.kappa >= 1.0);
    }

    #[test]
    fn feasible_ranks_are_accepted() {
        let dims = [4, 4, 4];
        let dense = DenseTensor::random_normal(dims.to_vec(), &mut rng(10)).unwrap();
        let r = feasible_ranks(&dims, 6);
        assert_eq!(tt_svd(&dense, &r).unwrap().bond_ranks(), r);
    }
}
