//! Small dense linear-algebra helpers shared by the TT modules.

use nalgebra::{DMatrix, SVD};

use crate::error::{Result, TtError};

pub type Matrix = DMatrix<f64>;

/// Thin SVD with singular values sorted in descending order.
///
/// Each left singular vector is flipped so that its largest-magnitude entry is
/// positive (ties go to the lowest index); the matching right singular vector
/// is flipped with it.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v_t: Matrix,
}

pub fn thin_svd(m: &Matrix) -> ThinSvd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return ThinSvd {
            u: Matrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v_t: Matrix::zeros(0, cols),
        };
    }
    let svd = SVD::new(m.clone(), true, true);
    let u_raw = svd.u.expect("left singular vectors requested");
    let vt_raw = svd.v_t.expect("right singular vectors requested");
    let s_raw = svd.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s_raw[b].total_cmp(&s_raw[a]).then(a.cmp(&b)));

    let mut u = Matrix::zeros(rows, k);
    let mut v_t = Matrix::zeros(k, cols);
    let mut singular_values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let col = u_raw.column(src);
        let mut pivot = 0;
        for r in 1..rows {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        u.set_column(dst, &(col * sign));
        v_t.set_row(dst, &(vt_raw.row(src) * sign));
        singular_values.push(s_raw[src]);
    }
    ThinSvd {
        u,
        singular_values,
        v_t,
    }
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `‖MᵀM − I‖_F`.
pub fn orthonormality_residual(m: &Matrix) -> f64 {
    let gram = m.transpose() * m;
    (gram - Matrix::identity(m.ncols(), m.ncols())).norm()
}

/// Orthonormal polar factor `W (WᵀW)^{-1/2} = U Vᵀ` of a tall matrix.
///
/// Fails when the smallest singular value is at or below `min_sigma`.
pub fn polar_factor(w: &Matrix, min_sigma: f64) -> Result<Matrix> {
    let (rows, cols) = w.shape();
    if rows < cols {
        return Err(TtError::domain(format!(
            "polar factor needs a tall matrix, got {rows}x{cols}"
        )));
    }
    if cols == 0 {
        return Ok(Matrix::zeros(rows, 0));
    }
    let svd = thin_svd(w);
    let smallest = *svd.singular_values.last().unwrap();
    if !(smallest > min_sigma) {
        return Err(TtError::Singular(format!(
            "smallest singular value {smallest:e} <= {min_sigma:e}"
        )));
    }
    Ok(&svd.u * &svd.v_t)
}

/// Polar factor of a square matrix over the full orthogonal group; used for
/// orthogonal Procrustes problems `max_R ⟨B, R⟩`. Never fails.
pub fn procrustes_rotation(b: &Matrix) -> Matrix {
    let svd = thin_svd(b);
    &svd.u * &svd.v_t
}

/// Extends the orthonormal columns of `q` to `target` orthonormal columns by
/// Gram-Schmidt against the standard basis. Requires `target <= q.nrows()`.
pub fn complete_orthonormal(q: &Matrix, target: usize) -> Matrix {
    let rows = q.nrows();
    assert!(target <= rows, "cannot fit {target} orthonormal columns in R^{rows}");
    let mut cols: Vec<nalgebra::DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < target && e < rows {
        let mut v = nalgebra::DVector::zeros(rows);
        v[e] = 1.0;
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            cols.push(v / n);
        }
        e += 1;
    }
    Matrix::from_columns(&cols)
}
