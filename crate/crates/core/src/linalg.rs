//! Small dense helpers shared by the solvers. Every inverse in the crate goes
//! through [`solve`] (LU with partial pivoting) rather than an explicit inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{GtdError, Result};

/// Solves `m x = rhs` with partial pivoting.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if !m.is_square() || m.nrows() != rhs.len() {
        return Err(GtdError::ShapeMismatch(format!(
            "{what}: {}x{} system with rhs of length {}",
            m.nrows(),
            m.ncols(),
            rhs.len()
        )));
    }
    let x = m.clone().lu().solve(rhs).ok_or_else(|| GtdError::Degenerate(format!("{what} is singular")))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(GtdError::Degenerate(format!("{what} is numerically singular")))
    }
}

/// Solves `m X = rhs` column by column.
pub fn solve_matrix(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() || m.nrows() != rhs.nrows() {
        return Err(GtdError::ShapeMismatch(format!("{what}: incompatible shapes")));
    }
    let x = m.clone().lu().solve(rhs).ok_or_else(|| GtdError::Degenerate(format!("{what} is singular")))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(GtdError::Degenerate(format!("{what} is numerically singular")))
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// 2-norm condition number; infinite when the smallest singular value is zero.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Numerical rank with singular values above `rel_tol * largest`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let Some(&hi) = sv.first() else { return 0 };
    if hi == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * hi).count()
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
