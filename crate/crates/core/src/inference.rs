//! Estimates, intervals and diagnostics built on the debiasing vectors.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ortho::{self, OrthoConfig, OrthoSolution};
use crate::rng::{self, Role};
use crate::stats;

/// Upper end of the known range for the Berry–Esseen constant with
/// non-identically distributed summands.
pub const BERRY_ESSEEN_C: f64 = 0.5606;

fn check_qtx(sol: &OrthoSolution) -> Result<()> {
    if sol.q_tx == 0.0 || !sol.q_tx.is_finite() {
        return Err(Error::Singular(format!(
            "estimating column {}: qᵀx_ψ = {}",
            sol.column_index, sol.q_tx
        )));
    }
    Ok(())
}

/// `ψ̃ = qᵀY / qᵀx_ψ`.
pub fn estimate_coefficient(sol: &OrthoSolution, y: &DVector<f64>) -> Result<f64> {
    check_qtx(sol)?;
    if y.len() != sol.q.len() {
        return Err(Error::Dimension(format!(
            "response has {} entries, q has {}",
            y.len(),
            sol.q.len()
        )));
    }
    Ok(sol.q.dot(y) / sol.q_tx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEntry {
    pub i: usize,
    pub j: usize,
    /// `cov(ψ̃, χ̃) / τ`.
    pub v: f64,
}

/// `v_ψχ = q_ψᵀq_χ / (q_ψᵀx_ψ · q_χᵀx_χ)`. Symmetric in its arguments to the
/// last bit.
pub fn covariance(a: &OrthoSolution, b: &OrthoSolution) -> Result<CovarianceEntry> {
    check_qtx(a)?;
    check_qtx(b)?;
    if a.q.len() != b.q.len() {
        return Err(Error::Dimension("solutions come from different datasets".into()));
    }
    Ok(CovarianceEntry {
        i: a.column_index,
        j: b.column_index,
        v: a.q.dot(&b.q) / (a.q_tx * b.q_tx),
    })
}

/// `τ⁻¹·cov` over a set of solutions.
pub fn covariance_matrix(sols: &[OrthoSolution]) -> Result<DMatrix<f64>> {
    let k = sols.len();
    let mut m = DMatrix::zeros(k, k);
    for r in 0..k {
        for c in r..k {
            let v = covariance(&sols[r], &sols[c])?.v;
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `z_{1−α/2}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    stats::normal_quantile(1.0 - alpha / 2.0)
}

/// `ψ̃ ∓ z_{1−α/2}(V_n·v)^{1/2}`.
pub fn confidence_interval(psi_hat: f64, v: f64, vn: f64, alpha: f64) -> Result<Interval> {
    if !(v > 0.0) || !(vn > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance factors must be positive (v = {v}, V_n = {vn})"
        )));
    }
    let hw = critical_value(alpha)? * (vn * v).sqrt();
    Ok(Interval {
        lower: psi_hat - hw,
        upper: psi_hat + hw,
    })
}

/// Normal pivot for `H₀: ψ = ψ₀`, ignoring the bias term.
pub fn pivot_u(sol: &OrthoSolution, y: &DVector<f64>, psi0: f64, vn: f64) -> Result<f64> {
    if !(vn > 0.0) {
        return Err(Error::InvalidParameter(format!("V_n must be positive, got {vn}")));
    }
    let psi_hat = estimate_coefficient(sol, y)?;
    Ok(sol.q_tx * (psi_hat - psi0) / (vn * sol.q.norm_squared()).sqrt())
}

/// Exact bias `b_ψ = Σ_θ ϑ_θ·β_θ` given the true coefficients.
pub fn true_bias(sol: &OrthoSolution, beta: &DVector<f64>) -> Result<f64> {
    if beta.len() != sol.theta.len() + 1 {
        return Err(Error::Dimension(format!(
            "beta has {} entries, design has {}",
            beta.len(),
            sol.theta.len() + 1
        )));
    }
    let mut bias = 0.0;
    let mut lambda_sq = 0.0;
    let mut theta_sq_support = 0.0;
    for (k, &t) in sol.theta.iter().enumerate() {
        let b = beta[sol.theta_column(k)];
        if b != 0.0 {
            bias += t * b;
            lambda_sq += b * b;
            theta_sq_support += t * t;
        }
    }
    debug_assert!(
        bias * bias <= lambda_sq * theta_sq_support * (1.0 + 1e-12) + f64::MIN_POSITIVE,
        "Cauchy–Schwarz bound violated"
    );
    Ok(bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Known,
    RefittedCrossValidation,
    SingleSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: VarianceMethod,
    /// Residual degrees of freedom behind the estimate; zero when known.
    pub df: usize,
}

impl VarianceEstimate {
    pub fn known(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            value: tau,
            method: VarianceMethod::Known,
            df: 0,
        })
    }
}

/// Variable screening used to pick a low-dimensional model on one half of
/// the data. Implementations return `k` distinct column indices.
pub trait Screen: Sync {
    fn select(&self, x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<Vec<usize>>;
}

/// Top-`k` columns by absolute sample correlation with the response. Ties
/// go to the lower index.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarginalCorrelation;

impl MarginalCorrelation {
    pub fn scores(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
        let n = y.len() as f64;
        let ym = y.mean();
        let yc = y.add_scalar(-ym);
        let ynorm = yc.norm();
        x.column_iter()
            .map(|c| {
                let cm = c.sum() / n;
                let mut sxy = 0.0;
                let mut sxx = 0.0;
                for (a, b) in c.iter().zip(yc.iter()) {
                    let a = a - cm;
                    sxy += a * b;
                    sxx += a * a;
                }
                if sxx == 0.0 || ynorm == 0.0 {
                    0.0
                } else {
                    (sxy / (sxx.sqrt() * ynorm)).abs()
                }
            })
            .collect()
    }
}

impl Screen for MarginalCorrelation {
    fn select(&self, x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<Vec<usize>> {
        let scores = Self::scores(x, y);
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx.sort_unstable();
        Ok(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Screen on each half, fit on the other, average the two.
    #[default]
    Refitted,
    /// Screen on the first half, fit on the second.
    Single,
}

/// Random bisection `(I₁, I₂)` of `0..n` with sizes `⌊n/2⌋` and `⌈n/2⌉`.
pub fn bisect_rows(n: usize, seed: u64, index: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::substream(seed, Role::Split, index));
    let second = perm.split_off(n / 2);
    (perm, second)
}

/// Screens on `screen_rows`, fits OLS with an intercept on `fit_rows`.
fn half_estimate(
    d: &Dataset,
    screen: &dyn Screen,
    screen_rows: &[usize],
    fit_rows: &[usize],
    k: usize,
) -> Result<(f64, usize)> {
    if k + 1 >= fit_rows.len() {
        return Err(Error::DegenerateDf(format!(
            "screened model of size {k} leaves no residual degrees of freedom on {} rows",
            fit_rows.len()
        )));
    }
    let xs = d.x().select_rows(screen_rows);
    let ys = DVector::from_iterator(screen_rows.len(), screen_rows.iter().map(|&i| d.y()[i]));
    let chosen = screen.select(&xs, &ys, k)?;
    let m = fit_rows.len();
    let mut design = DMatrix::zeros(m, chosen.len() + 1);
    for (r, &i) in fit_rows.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for (c, &j) in chosen.iter().enumerate() {
            design[(r, c + 1)] = d.x()[(i, j)];
        }
    }
    let yf = DVector::from_iterator(m, fit_rows.iter().map(|&i| d.y()[i]));
    let coef = linalg::least_squares(&design, &yf, "fitting the screened model on the held-out half")?;
    let rss = (yf - design * coef).norm_squared();
    let df = m - chosen.len() - 1;
    Ok((rss / df as f64, df))
}

/// Error variance by sample splitting.
///
/// Rows are bisected at random. Variables are screened on one half (`k =
/// min(⌊n/4⌋, p)`) and an OLS fit with intercept on the other half supplies
/// `RSS / df`. In refitted mode the roles are swapped and the two estimates
/// averaged.
pub fn estimate_variance_split(
    d: &Dataset,
    screen: &dyn Screen,
    split_seed: u64,
    mode: SplitMode,
) -> Result<VarianceEstimate> {
    let n = d.n();
    if n < 8 {
        return Err(Error::InvalidParameter(format!(
            "variance splitting needs at least 8 rows, got {n}"
        )));
    }
    let k = (n / 4).min(d.p());
    let (first, second) = bisect_rows(n, split_seed, 0);
    let (v1, df1) = half_estimate(d, screen, &first, &second, k)?;
    match mode {
        SplitMode::Single => Ok(VarianceEstimate {
            value: v1,
            method: VarianceMethod::SingleSplit,
            df: df1,
        }),
        SplitMode::Refitted => {
            let (v2, df2) = half_estimate(d, screen, &second, &first, k)?;
            Ok(VarianceEstimate {
                value: 0.5 * (v1 + v2),
                method: VarianceMethod::RefittedCrossValidation,
                df: df1 + df2,
            })
        }
    }
}

/// `E|ε|³` for `ε ~ N(0, τ)`.
pub fn gaussian_third_abs_moment(tau: f64) -> f64 {
    2.0 * (2.0 / std::f64::consts::PI).sqrt() * tau.powf(1.5)
}

/// `e_n = Σ|q_j|³·E|ε|³ / ((nτ)^{3/2}(qᵀq)^{3/4})` for homoscedastic errors.
pub fn berry_esseen_en(q: &DVector<f64>, tau: f64, third_abs_moment: f64) -> Result<f64> {
    if !(tau > 0.0) || !(third_abs_moment > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau and the third absolute moment must be positive (got {tau}, {third_abs_moment})"
        )));
    }
    let n = q.len() as f64;
    let cubes: f64 = q.iter().map(|v| v.abs().powi(3)).sum();
    Ok(cubes * third_abs_moment / ((n * tau).powf(1.5) * q.norm_squared().powf(0.75)))
}

/// `C·e_n`, the bound on `sup_z |pr(τ^{-1/2}S_n ≤ z) − Φ(z)|`.
pub fn berry_esseen(sol: &OrthoSolution, tau: f64, third_abs_moment: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("constant must be positive, got {c}")));
    }
    Ok(c * berry_esseen_en(&sol.q, tau, third_abs_moment)?)
}

/// Leading term of the solution of `g⁻¹e^{-g} = e_n`:
/// `g_n = log(1/e_n) − log log(1/e_n)`.
pub fn g_n_diagnostic(e_n: f64) -> Result<f64> {
    if !(e_n > 0.0 && e_n < (-1.0_f64).exp()) {
        return Err(Error::InvalidParameter(format!(
            "g_n needs e_n in (0, 1/e), got {e_n}"
        )));
    }
    let l = -e_n.ln();
    Ok(l - l.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub index: usize,
    pub label: String,
    pub psi_hat: f64,
    pub std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub v: f64,
    pub sum_theta_sq: f64,
    pub berry_esseen: Option<f64>,
    pub g_n: Option<f64>,
}

impl CoefficientRecord {
    pub fn interval(&self) -> Interval {
        Interval {
            lower: self.ci_lower,
            upper: self.ci_upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub alpha: f64,
    pub delta: f64,
    pub variance: VarianceEstimate,
    pub records: Vec<CoefficientRecord>,
}

impl InferenceReport {
    pub fn record(&self, index: usize) -> Option<&CoefficientRecord> {
        self.records.iter().find(|r| r.index == index)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,estimate,lower,upper,std_err,sum_theta_sq,e_n\n");
        for r in &self.records {
            let en = r.berry_esseen.map(|v| format!("{v:e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.index, r.psi_hat, r.ci_lower, r.ci_upper, r.std_err, r.sum_theta_sq, en
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Point estimates and `(1 − α)` intervals for `columns` (all columns when
/// `None`). The Berry–Esseen entry assumes Gaussian errors with variance
/// `V_n`.
pub fn infer(
    d: &Dataset,
    columns: Option<&[usize]>,
    cfg: &OrthoConfig,
    variance: VarianceEstimate,
    alpha: f64,
) -> Result<InferenceReport> {
    check_alpha(alpha)?;
    if !(variance.value > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "error variance must be positive, got {}",
            variance.value
        )));
    }
    let all: Vec<usize>;
    let columns = match columns {
        Some(c) => c,
        None => {
            all = (0..d.p()).collect();
            &all
        }
    };
    let sols = ortho::compute_many(d, columns, cfg)?;
    let z = critical_value(alpha)?;
    let m3 = gaussian_third_abs_moment(variance.value);
    let records = sols
        .par_iter()
        .map(|sol| {
            let psi_hat = estimate_coefficient(sol, d.y())?;
            let std_err = (variance.value * sol.v).sqrt();
            let en = berry_esseen(sol, variance.value, m3, BERRY_ESSEEN_C)?;
            Ok(CoefficientRecord {
                index: sol.column_index,
                label: d.column_ids()[sol.column_index].clone(),
                psi_hat,
                std_err,
                ci_lower: psi_hat - z * std_err,
                ci_upper: psi_hat + z * std_err,
                v: sol.v,
                sum_theta_sq: sol.sum_theta_sq,
                berry_esseen: Some(en),
                g_n: g_n_diagnostic(en).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceReport {
        alpha,
        delta: cfg.delta,
        variance,
        records,
    })
}
