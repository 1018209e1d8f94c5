//! Stiefel-manifold primitives on `St(m, n) = { Y : YᵀY = I_n }`.

use crate::error::{Result, TtError};
use crate::linalg::{orthonormality_residual, polar_factor, Matrix};

/// Largest `‖YᵀY − I‖_F` accepted for a point on the manifold.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Smallest singular value the retraction accepts.
pub const RETRACT_MIN_SIGMA: f64 = 1e-12;

pub fn check_orthonormal(y: &Matrix) -> Result<()> {
    if y.nrows() < y.ncols() {
        return Err(TtError::Precondition(format!(
            "a {}x{} matrix cannot have orthonormal columns",
            y.nrows(),
            y.ncols()
        )));
    }
    let res = orthonormality_residual(y);
    if !(res <= ORTHONORMAL_TOL) {
        return Err(TtError::Precondition(format!(
            "columns not orthonormal (residual {res:e})"
        )));
    }
    Ok(())
}

fn check_shapes(y: &Matrix, b: &Matrix) -> Result<()> {
    if y.shape() != b.shape() {
        return Err(TtError::domain(format!(
            "shape mismatch: point {:?}, direction {:?}",
            y.shape(),
            b.shape()
        )));
    }
    check_orthonormal(y)
}

/// `½ Y (BᵀY + YᵀB)`
fn sym_part(y: &Matrix, b: &Matrix) -> Matrix {
    let ytb = y.transpose() * b;
    let sym = (&ytb + ytb.transpose()) * 0.5;
    y * sym
}

/// Projection onto the tangent space at `y`: `B − ½Y(BᵀY + YᵀB)`.
pub fn tangent_project(y: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_shapes(y, b)?;
    Ok(b - sym_part(y, b))
}

/// Projection onto the normal space at `y`: `½Y(BᵀY + YᵀB)`.
pub fn tangent_complement(y: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_shapes(y, b)?;
    Ok(sym_part(y, b))
}

/// Both projections at once; they sum to `b` up to rounding.
pub fn split_tangent(y: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    check_shapes(y, b)?;
    let normal = sym_part(y, b);
    Ok((b - &normal, normal))
}

/// Polar retraction `W (WᵀW)^{-1/2}`, the closest orthonormal matrix to `W`.
pub fn polar_retract(w: &Matrix) -> Result<Matrix> {
    polar_factor(w, RETRACT_MIN_SIGMA)
}
