//! Dense linear-algebra and differentiation kernels.
//!
//! Matrices and vectors are `nalgebra` dynamic types; everything here is a
//! pure function of its inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{MpcError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot magnitude below which a matrix is treated as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;

pub fn mat_vec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.ncols() != v.len() {
        return Err(MpcError::shape(format!(
            "matrix has {} columns, vector has {} entries",
            m.ncols(),
            v.len()
        )));
    }
    Ok(m * v)
}

/// Solves `m y = b` by LU factorization with partial pivoting.
pub fn solve_linear(m: &Matrix, b: &Vector) -> Result<Vector> {
    if !m.is_square() {
        return Err(MpcError::shape(format!(
            "solve_linear needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() != b.len() {
        return Err(MpcError::shape(format!(
            "matrix has {} rows, right-hand side has {} entries",
            m.nrows(),
            b.len()
        )));
    }
    let scale = mat_inf_norm(m);
    if scale == 0.0 {
        return Err(MpcError::Singular);
    }
    let lu = m.clone().lu();
    let u = lu.u();
    if u.diagonal().iter().any(|p| p.abs() < SINGULAR_PIVOT_TOL * scale) {
        return Err(MpcError::Singular);
    }
    lu.solve(b).ok_or(MpcError::Singular)
}

/// Least-squares solution of `m y ≈ b`.
///
/// Uses the normal equations when `mᵀm` is well conditioned and falls back
/// to an SVD (minimum-norm) solve otherwise.
pub fn pseudo_inverse_apply(m: &Matrix, b: &Vector) -> Result<Vector> {
    if m.nrows() != b.len() {
        return Err(MpcError::shape(format!(
            "matrix has {} rows, vector has {} entries",
            m.nrows(),
            b.len()
        )));
    }
    if m.iter().all(|v| *v == 0.0) {
        return Err(MpcError::NoSteadyState(
            "pseudo-inverse of a zero matrix".into(),
        ));
    }
    let mt = m.transpose();
    match solve_linear(&(&mt * m), &(&mt * b)) {
        Ok(y) => Ok(y),
        Err(MpcError::Singular) => {
            let svd = m.clone().svd(true, true);
            let eps = SINGULAR_PIVOT_TOL * svd.singular_values.max();
            svd.solve(b, eps)
                .map_err(|e| MpcError::NoSteadyState(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

/// Forward-difference Jacobian of `f` at `z`.
///
/// Column `c` uses the step `sqrt(eps) * max(1, |z_c|)`.
pub fn finite_diff_jacobian<F>(f: F, z: &Vector) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let f0 = f(z)?;
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut jac = Matrix::zeros(f0.len(), z.len());
    let mut zp = z.clone();
    for c in 0..z.len() {
        let h = sqrt_eps * z[c].abs().max(1.0);
        zp[c] = z[c] + h;
        // the realized step differs from h by rounding
        let h_eff = zp[c] - z[c];
        let fp = f(&zp)?;
        if fp.len() != f0.len() {
            return Err(MpcError::Evaluation(format!(
                "output dimension changed from {} to {}",
                f0.len(),
                fp.len()
            )));
        }
        jac.set_column(c, &((fp - &f0) / h_eff));
        zp[c] = z[c];
    }
    Ok(jac)
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Maximum absolute row sum.
pub fn mat_inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacks matrices with equal column counts on top of each other.
pub fn vstack(parts: &[&Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |p| p.ncols());
    debug_assert!(parts.iter().all(|p| p.ncols() == cols));
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(*p);
        r += p.nrows();
    }
    out
}

pub fn vconcat(parts: &[&Vector]) -> Vector {
    Vector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Builds a matrix from row-major nested rows.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 {
        return Err(MpcError::shape("matrix must have at least one row and column"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(MpcError::shape("ragged matrix rows"));
    }
    Ok(Matrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}
