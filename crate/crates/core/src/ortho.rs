//! Approximate orthogonalization of one column against the rest.
//!
//! For an interest column `x_ψ` and nuisance block `X₋ψ` the debiasing vector
//! minimizes
//!
//! ```text
//! m(q) = qᵀ(δI + X₋ψX₋ψᵀ)q / (qᵀx_ψ)²
//! ```
//!
//! whose minimizers are the multiples `q = a·M_δ⁻¹x_ψ` with
//! `M_δ = δI + X₋ψX₋ψᵀ`. Rather than factorizing `M_δ` for every column, one
//! inverse `B = (δI + XXᵀ)⁻¹` is formed per design and rank-one downdated:
//! `M_δ⁻¹x_ψ = Bx_ψ / (1 − x_ψᵀBx_ψ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, max_abs_diff};

/// Downdate denominators below this fall back to a direct solve.
const DOWNDATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoConfig {
    /// Ridge weight δ on the variance term.
    pub delta: f64,
    /// Scale of `q`; `None` means `a = δ`. Every reported quantity except
    /// `q` itself is invariant to this choice.
    pub a: Option<f64>,
    /// Slack allowed below zero for the smallest Hessian eigenvalue. `None`
    /// means `1e-8 · max|L_δ|`.
    pub saddle_tolerance: Option<f64>,
    /// Run the full eigendecomposition check for every column.
    pub check_saddle: bool,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            a: None,
            saddle_tolerance: None,
            check_saddle: false,
        }
    }
}

impl OrthoConfig {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    pub fn scale(&self) -> f64 {
        self.a.unwrap_or(self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        let a = self.scale();
        if a == 0.0 || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale a must be finite and nonzero, got {a}"
            )));
        }
        if let Some(t) = self.saddle_tolerance {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "saddle tolerance must be nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// `(δI + XXᵀ)⁻¹` for a fixed design and δ.
#[derive(Debug, Clone)]
pub struct BaseInverse {
    delta: f64,
    inverse: DMatrix<f64>,
}

impl BaseInverse {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }
}

pub fn base_inverse(x: &DMatrix<f64>, delta: f64) -> Result<BaseInverse> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let n = x.nrows();
    let mut m = x * x.transpose();
    for i in 0..n {
        m[(i, i)] += delta;
    }
    let inverse = linalg::spd_inverse(m, "inverting δI + XXᵀ")?;
    Ok(BaseInverse { delta, inverse })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvePath {
    ShermanMorrison,
    Direct,
}

/// Eigenvalue summary of `L_δ = M_δ − (x_ψᵀM_δ⁻¹x_ψ)⁻¹x_ψx_ψᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub min_eigenvalue: f64,
    /// Largest absolute eigenvalue.
    pub spectral_norm: f64,
    /// Largest absolute entry of `L_δ`.
    pub max_entry: f64,
    pub has_zero: bool,
    pub tolerance: f64,
    /// `min_eigenvalue ≥ −tolerance`: the closed form is a minimizer rather
    /// than a saddle point.
    pub is_minimizer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoSolution {
    pub column_index: usize,
    pub q: DVector<f64>,
    /// `qᵀx_ψ`.
    pub q_tx: f64,
    /// Variance factor `v_ψψ = qᵀq / (qᵀx_ψ)²`.
    pub v: f64,
    /// Leakage `ϑ_θ = qᵀx_θ / qᵀx_ψ` for every other column, in column order
    /// with ψ skipped.
    pub theta: DVector<f64>,
    pub sum_theta_sq: f64,
    /// `m(q)`.
    pub objective: f64,
    pub delta: f64,
    pub a: f64,
    pub path: SolvePath,
    pub saddle: Option<SaddleReport>,
}

impl OrthoSolution {
    /// Design column that `theta[k]` refers to.
    pub fn theta_column(&self, k: usize) -> usize {
        if k < self.column_index {
            k
        } else {
            k + 1
        }
    }

    /// `ϑ` for design column `c`, or `None` for ψ itself.
    pub fn theta_for_column(&self, c: usize) -> Option<f64> {
        match c.cmp(&self.column_index) {
            std::cmp::Ordering::Less => Some(self.theta[c]),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(self.theta[c - 1]),
        }
    }
}

fn check_column(d: &Dataset, j: usize) -> Result<()> {
    if j >= d.p() {
        return Err(Error::InvalidParameter(format!(
            "column index {j} out of range for {} columns",
            d.p()
        )));
    }
    Ok(())
}

/// `M_δ = δI + X₋ψX₋ψᵀ`, built explicitly.
fn nuisance_gram(d: &Dataset, j: usize, delta: f64) -> DMatrix<f64> {
    let x = d.x();
    let xj = x.column(j);
    let mut m = x * x.transpose() - xj * xj.transpose();
    for i in 0..d.n() {
        m[(i, i)] += delta;
    }
    (&m + m.transpose()) * 0.5
}

/// `M_δ q` without forming `M_δ`.
fn apply_gram(d: &Dataset, j: usize, delta: f64, q: &DVector<f64>) -> DVector<f64> {
    let x = d.x();
    let mut proj = x.tr_mul(q);
    proj[j] = 0.0;
    x * proj + q * delta
}

/// `m(q) = qᵀM_δq / (qᵀx_ψ)²` for an arbitrary `q`.
pub fn objective_value(d: &Dataset, j: usize, delta: f64, q: &DVector<f64>) -> f64 {
    let qtx = q.dot(&d.column(j));
    let mut proj = d.x().tr_mul(q);
    proj[j] = 0.0;
    (delta * q.norm_squared() + proj.norm_squared()) / (qtx * qtx)
}

fn finish(
    d: &Dataset,
    j: usize,
    cfg: &OrthoConfig,
    q: DVector<f64>,
    path: SolvePath,
) -> Result<OrthoSolution> {
    let q_tx = q.dot(&d.column(j));
    if q_tx == 0.0 || !q_tx.is_finite() {
        return Err(Error::Singular(format!(
            "orthogonalizing column {j}: qᵀx_ψ = {q_tx}"
        )));
    }
    let proj = d.x().tr_mul(&q);
    let theta = proj.remove_row(j) / q_tx;
    let sum_theta_sq = theta.norm_squared();
    let v = q.norm_squared() / (q_tx * q_tx);
    let objective = cfg.delta * v + sum_theta_sq;
    let saddle = if cfg.check_saddle {
        Some(saddle_check_with(d, j, cfg.delta, cfg.saddle_tolerance)?)
    } else {
        None
    };
    Ok(OrthoSolution {
        column_index: j,
        q,
        q_tx,
        v,
        theta,
        sum_theta_sq,
        objective,
        delta: cfg.delta,
        a: cfg.scale(),
        path,
        saddle,
    })
}

/// Closed-form debiasing vector for column `j`.
///
/// Uses the rank-one downdate of `base` (computed here when not supplied)
/// and falls back to a direct solve when the downdate denominator is
/// numerically zero.
pub fn compute_q(
    d: &Dataset,
    j: usize,
    cfg: &OrthoConfig,
    base: Option<&BaseInverse>,
) -> Result<OrthoSolution> {
    cfg.validate()?;
    check_column(d, j)?;
    let owned;
    let base = match base {
        Some(b) => {
            if b.inverse.nrows() != d.n() || b.delta != cfg.delta {
                return Err(Error::InvalidParameter(
                    "precomputed base inverse does not match the dataset or delta".into(),
                ));
            }
            b
        }
        None => {
            owned = base_inverse(d.x(), cfg.delta)?;
            &owned
        }
    };

    let xj = d.column(j);
    let bx = &base.inverse * xj;
    let denom = 1.0 - xj.dot(&bx);
    if denom.abs() < DOWNDATE_FLOOR {
        return compute_q_direct(d, j, cfg);
    }
    let q = bx * (cfg.scale() / denom);
    finish(d, j, cfg, q, SolvePath::ShermanMorrison)
}

/// Same solution through a Cholesky solve with `M_δ`. `O(n²p)` per column.
pub fn compute_q_direct(d: &Dataset, j: usize, cfg: &OrthoConfig) -> Result<OrthoSolution> {
    cfg.validate()?;
    check_column(d, j)?;
    let m = nuisance_gram(d, j, cfg.delta);
    let xj = d.column(j).into_owned();
    let q = linalg::spd_solve(m, &xj, &format!("solving M_δ q = x for column {j}"))? * cfg.scale();
    finish(d, j, cfg, q, SolvePath::Direct)
}

/// Debiasing vectors for several columns sharing one base inverse. Output
/// order follows `columns`.
pub fn compute_many(d: &Dataset, columns: &[usize], cfg: &OrthoConfig) -> Result<Vec<OrthoSolution>> {
    cfg.validate()?;
    let base = base_inverse(d.x(), cfg.delta)?;
    columns
        .par_iter()
        .map(|&j| compute_q(d, j, cfg, Some(&base)))
        .collect()
}

/// Relative residual of the stationarity condition
/// `(qᵀx)M_δq = (qᵀM_δq)x`.
pub fn stationarity_residual(d: &Dataset, j: usize, delta: f64, q: &DVector<f64>) -> f64 {
    let xj = d.column(j);
    let mq = apply_gram(d, j, delta, q);
    let lhs = &mq * q.dot(&xj);
    let rhs = xj * q.dot(&mq);
    (lhs - &rhs).norm() / rhs.norm()
}

/// Both algebraic forms of `P^ψ(δ,δ)`: `δ(δI + X₋ψX₋ψᵀ)⁻¹` and
/// `I − X₋ψ(δI + X₋ψᵀX₋ψ)⁻¹X₋ψᵀ`.
pub fn projector_forms(d: &Dataset, j: usize, delta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_column(d, j)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let n = d.n();
    if d.p() == 1 {
        return Ok((DMatrix::identity(n, n), DMatrix::identity(n, n)));
    }
    let m = nuisance_gram(d, j, delta);
    let first = linalg::spd_inverse(m, "inverting δI + X₋ψX₋ψᵀ")? * delta;

    let xm = d.without_column(j);
    let mut small = xm.tr_mul(&xm);
    for i in 0..small.nrows() {
        small[(i, i)] += delta;
    }
    let chol = small
        .cholesky()
        .ok_or_else(|| Error::Singular("inverting δI + X₋ψᵀX₋ψ".into()))?;
    let w = chol.solve(&xm.transpose());
    let mut second = DMatrix::identity(n, n) - &xm * w;
    second = (&second + second.transpose()) * 0.5;
    Ok((first, second))
}

/// Agreement tolerance for the two projector forms: `1e-9` plus the rounding
/// error expected from the worse-conditioned of the two solves.
pub fn projector_tolerance(d: &Dataset, j: usize, delta: f64) -> f64 {
    let frob_sq = d.x().norm_squared() - d.column(j).norm_squared();
    let cond = (delta + frob_sq) / delta;
    1e-9 + 64.0 * f64::EPSILON * cond
}

/// `P^ψ(δ,δ)`, cross-checked between its two forms.
pub fn projector(d: &Dataset, j: usize, delta: f64) -> Result<DMatrix<f64>> {
    let (first, second) = projector_forms(d, j, delta)?;
    let max_diff = max_abs_diff(&first, &second);
    let tolerance = projector_tolerance(d, j, delta);
    if !(max_diff <= tolerance) {
        return Err(Error::FormDisagreement {
            max_diff,
            tolerance,
        });
    }
    Ok(first)
}

/// Full eigendecomposition of `L_δ` with the default tolerance.
pub fn saddle_check(d: &Dataset, j: usize, delta: f64) -> Result<SaddleReport> {
    check_column(d, j)?;
    saddle_check_with(d, j, delta, None)
}

pub fn hessian_matrix(d: &Dataset, j: usize, delta: f64) -> Result<DMatrix<f64>> {
    let m = nuisance_gram(d, j, delta);
    let xj = d.column(j).into_owned();
    let minv_x = linalg::spd_solve(m.clone(), &xj, "solving M_δ z = x_ψ")?;
    let c = xj.dot(&minv_x);
    let l = m - &xj * xj.transpose() / c;
    Ok((&l + l.transpose()) * 0.5)
}

fn saddle_check_with(
    d: &Dataset,
    j: usize,
    delta: f64,
    tolerance: Option<f64>,
) -> Result<SaddleReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let l = hessian_matrix(d, j, delta)?;
    let max_entry = l.amax();
    let eig = l
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::EigenNonConvergence)?;
    let ev = eig.eigenvalues;
    let min_eigenvalue = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let spectral_norm = ev.amax();
    let has_zero = ev.iter().any(|e| e.abs() < 1e-8 * spectral_norm);
    let tolerance = tolerance.unwrap_or(1e-8 * max_entry);
    Ok(SaddleReport {
        min_eigenvalue,
        spectral_norm,
        max_entry,
        has_zero,
        tolerance,
        is_minimizer: min_eigenvalue >= -tolerance,
    })
}

/// Multiplier `c = (X₋ψᵀX₋ψ)⁻¹X₋ψᵀx_ψ` of ψ in the orthogonal nuisance
/// parameter `φ = λ + cψ`. Needs `p − 1 < n`.
pub fn cox_reid_coef(d: &Dataset, j: usize) -> Result<DVector<f64>> {
    check_column(d, j)?;
    if d.p() > d.n() {
        return Err(Error::RankDeficient(format!(
            "orthogonal reparameterization needs p - 1 < n (p = {}, n = {})",
            d.p(),
            d.n()
        )));
    }
    let xm = d.without_column(j);
    let xj = d.column(j).into_owned();
    linalg::least_squares(&xm, &xj, "regressing x_ψ on the nuisance columns")
}
