//! Dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inverse of a symmetric positive definite matrix via Cholesky, symmetrized.
pub(crate) fn spd_inverse(m: DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular(context.to_owned()))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Solution of `m z = b` for symmetric positive definite `m`.
pub(crate) fn spd_solve(m: DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Singular(context.to_owned()))?;
    Ok(chol.solve(b))
}

/// Least squares through a thin QR factorization. Fails when the design is
/// numerically rank deficient or has no spare rows.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let (n, k) = a.shape();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    if k > n {
        return Err(Error::RankDeficient(format!(
            "{context}: {k} columns but only {n} rows"
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = diag_max * 1e-10 * (n.max(k) as f64);
    if diag_max == 0.0 || r.diagonal().iter().any(|v| v.abs() <= tol) {
        return Err(Error::RankDeficient(context.to_owned()));
    }
    let qtb = qr.q().tr_mul(b);
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::RankDeficient(context.to_owned()))
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
