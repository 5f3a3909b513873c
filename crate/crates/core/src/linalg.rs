//! Small dense linear algebra used throughout the crate.
//!
//! All systems here are tiny (n <= 12), so solves go through an LU
//! factorisation with partial pivoting and a 1-norm condition estimate
//! computed from the explicit inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition numbers above this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

pub fn norm_one(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Inverse via LU with partial pivoting, rejecting singular or
/// ill-conditioned input.
pub fn inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
            context,
        });
    }
    if !all_finite(a) {
        return Err(Error::NumericalFailure(context));
    }
    let inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { context })?;
    let condition = norm_one(a) * norm_one(&inv);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { condition, context });
    }
    Ok(inv)
}

/// Solve `a x = b`.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.len(),
            context,
        });
    }
    Ok(inverse(a, context)? * b)
}

/// `true` when the matrix is symmetric within `tol` and admits a Cholesky factor.
pub fn is_spd(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && max_abs(&(a - a.transpose())) <= tol && a.clone().cholesky().is_some()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Finite-difference step used for coordinate `x`.
pub fn fd_step(scale: f64, x: f64) -> f64 {
    scale * x.abs().max(1.0)
}

/// Central-difference Jacobian of a vector map.
pub fn jacobian_fd<F>(f: F, x: &DVector<f64>, scale: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = fd_step(scale, x[j]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Central-difference gradient of a scalar map.
pub fn gradient_fd<F>(f: F, x: &DVector<f64>, scale: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut g = DVector::zeros(x.len());
    for j in 0..x.len() {
        let h = fd_step(scale, x[j]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(g)
}
