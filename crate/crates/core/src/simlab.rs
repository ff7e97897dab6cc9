//! Monte Carlo coverage experiments on equicorrelated designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{center_columns, Dataset};
use crate::error::{Error, Result};
use crate::inference::{self, MarginalCorrelation, SplitMode};
use crate::linalg;
use crate::ortho::{self, OrthoConfig};
use crate::rng::{self, Role};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;

const CHUNK: usize = 64;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_s() -> usize {
    5
}
fn default_one() -> f64 {
    1.0
}
fn default_reps() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}

/// How the error variance enters the intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    #[default]
    Known,
    /// Re-estimated in every replication by sample splitting.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub rho: f64,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default = "default_one")]
    pub beta_value: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_one")]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_one")]
    pub delta: f64,
    #[serde(default = "default_one")]
    pub a: f64,
    /// Number of leading coefficients summarized; `min(1000, p)` when absent.
    #[serde(default)]
    pub n_report: Option<usize>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub variance: VarianceSource,
}

impl SimConfig {
    pub fn new(rho: f64, n: usize, p: usize) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            rho,
            n,
            p,
            s: default_s(),
            beta_value: 1.0,
            reps: default_reps(),
            tau: 1.0,
            alpha: default_alpha(),
            delta: 1.0,
            a: 1.0,
            n_report: None,
            master_seed: None,
            variance: VarianceSource::Known,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_report(&self) -> usize {
        self.n_report.unwrap_or(self.p.min(1000))
    }

    pub fn seed(&self) -> Result<u64> {
        self.master_seed
            .ok_or_else(|| Error::InvalidParameter("master_seed is not set".into()))
    }

    pub fn ortho_config(&self) -> OrthoConfig {
        OrthoConfig {
            delta: self.delta,
            a: Some(self.a),
            ..OrthoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.n < 2 || self.p < 2 {
            return bad(format!("need n ≥ 2 and p ≥ 2, got n = {}, p = {}", self.n, self.p));
        }
        if self.s > self.p {
            return bad(format!("s = {} exceeds p = {}", self.s, self.p));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !self.beta_value.is_finite() {
            return bad("beta_value must be finite".into());
        }
        let k = self.n_report();
        if k == 0 || k > self.p {
            return bad(format!("n_report must lie in 1..={}, got {k}", self.p));
        }
        self.ortho_config().validate()
    }

    /// `β` with `beta_value` in the first `s` entries.
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_fn(self.p, |i, _| if i < self.s { self.beta_value } else { 0.0 })
    }
}

/// Rows `√ρ·z₀·1 + √(1−ρ)·z`, then column-centered.
pub fn generate_design(cfg: &SimConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng::substream(seed, Role::Design, 0);
    let (a, b) = (cfg.rho.sqrt(), (1.0 - cfg.rho).sqrt());
    let mut x = DMatrix::zeros(cfg.n, cfg.p);
    for i in 0..cfg.n {
        let z0: f64 = rng.sample(StandardNormal);
        for j in 0..cfg.p {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = a * z0 + b * z;
        }
    }
    Ok(center_columns(&Dataset::from_parts(DVector::zeros(cfg.n), x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub index: usize,
    pub coverage: f64,
    pub mean_length: f64,
    pub abs_bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub modal_coverage: f64,
    pub median_coverage: f64,
    pub median_length: f64,
    pub median_theta_sq: f64,
    pub p95_theta_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub seed: u64,
    pub coefficients: Vec<CoefficientSummary>,
    pub aggregates: Aggregates,
    /// Per-replication variance estimates; empty when the variance is known.
    pub variance_estimates: Vec<f64>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn mean_variance_estimate(&self) -> Option<f64> {
        if self.variance_estimates.is_empty() {
            None
        } else {
            Some(self.variance_estimates.iter().sum::<f64>() / self.variance_estimates.len() as f64)
        }
    }
}

/// Extra switches for [`run_experiment_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Replace every error draw by zero.
    pub zero_noise: bool,
}

/// Builds the design from the config and runs the replications.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimReport> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &SimConfig, opts: RunOptions) -> Result<SimReport> {
    let seed = cfg.seed()?;
    let design = generate_design(cfg, seed)?;
    run_on_design(cfg, &design, opts)
}

#[derive(Default)]
struct Tally {
    hits: Vec<u64>,
    length_sum: Vec<f64>,
    vn: Vec<f64>,
}

impl Tally {
    fn new(k: usize) -> Self {
        Self {
            hits: vec![0; k],
            length_sum: vec![0.0; k],
            vn: Vec::new(),
        }
    }

    fn merge(&mut self, other: Tally) {
        self.hits.iter_mut().zip(other.hits).for_each(|(a, b)| *a += b);
        self.length_sum
            .iter_mut()
            .zip(other.length_sum)
            .for_each(|(a, b)| *a += b);
        self.vn.extend(other.vn);
    }
}

/// Runs the replications on a fixed design (only `design.x()` is used).
///
/// Replication `r` draws its errors from the `(seed, Noise, r)` substream
/// and, with estimated variance, its row split from `(seed, Split, r)`, so
/// the result does not depend on the number of worker threads.
pub fn run_on_design(cfg: &SimConfig, design: &Dataset, opts: RunOptions) -> Result<SimReport> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    if design.n() != cfg.n || design.p() != cfg.p {
        return Err(Error::Dimension(format!(
            "design is {}×{}, config says {}×{}",
            design.n(),
            design.p(),
            cfg.n,
            cfg.p
        )));
    }
    let k = cfg.n_report();
    let beta = cfg.beta();
    let columns: Vec<usize> = (0..k).collect();
    let sols = ortho::compute_many(design, &columns, &cfg.ortho_config())?;

    // ψ̃_j = w_jᵀY with w_j = q_j / q_jᵀx_j
    let mut w = DMatrix::zeros(cfg.n, k);
    for (c, sol) in sols.iter().enumerate() {
        w.set_column(c, &(&sol.q / sol.q_tx));
    }
    let v: Vec<f64> = sols.iter().map(|s| s.v).collect();
    let abs_bias = sols
        .iter()
        .map(|s| inference::true_bias(s, &beta).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    let mean = design.x() * &beta;
    let z = inference::critical_value(cfg.alpha)?;
    let noise_sd = cfg.tau.sqrt();

    let chunks: Vec<std::ops::Range<usize>> = (0..cfg.reps)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(cfg.reps))
        .collect();
    let tallies = chunks
        .into_par_iter()
        .map(|range| {
            let mut t = Tally::new(k);
            for r in range {
                let y = if opts.zero_noise {
                    mean.clone()
                } else {
                    let mut g = rng::substream(seed, Role::Noise, r as u64);
                    DVector::from_fn(cfg.n, |i, _| {
                        mean[i] + noise_sd * g.sample::<f64, _>(StandardNormal)
                    })
                };
                let vn = match cfg.variance {
                    VarianceSource::Known => cfg.tau,
                    VarianceSource::Split => {
                        let d = design.with_response(y.clone())?;
                        let split_seed = rng::derive_seed(seed, Role::Split, r as u64);
                        let est = inference::estimate_variance_split(
                            &d,
                            &MarginalCorrelation,
                            split_seed,
                            SplitMode::Refitted,
                        )?;
                        t.vn.push(est.value);
                        est.value
                    }
                };
                let est = w.tr_mul(&y);
                for c in 0..k {
                    let hw = z * (vn * v[c]).sqrt();
                    if (est[c] - beta[c]).abs() <= hw {
                        t.hits[c] += 1;
                    }
                    t.length_sum[c] += 2.0 * hw;
                }
            }
            Ok(t)
        })
        .collect::<Result<Vec<Tally>>>()?;
    let mut total = Tally::new(k);
    for t in tallies {
        total.merge(t);
    }

    let reps = cfg.reps as f64;
    let coefficients: Vec<CoefficientSummary> = (0..k)
        .map(|c| CoefficientSummary {
            index: c,
            coverage: total.hits[c] as f64 / reps,
            mean_length: total.length_sum[c] / reps,
            abs_bias: abs_bias[c],
        })
        .collect();
    let mut theta_sq: Vec<f64> = sols
        .iter()
        .flat_map(|s| s.theta.iter().map(|t| t * t).collect::<Vec<_>>())
        .collect();
    let coverages: Vec<f64> = coefficients.iter().map(|c| c.coverage).collect();
    let lengths: Vec<f64> = coefficients.iter().map(|c| c.mean_length).collect();
    let aggregates = summarize(&coverages, &lengths, &mut theta_sq)?;
    Ok(SimReport {
        config: cfg.clone(),
        seed,
        coefficients,
        aggregates,
        variance_estimates: total.vn,
    })
}

/// Most frequent value; ties go to the value closest to `median`, then to
/// the larger value.
pub fn modal_value(values: &[f64], median: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let (val, cnt) = (sorted[i], j - i);
        let better = cnt > best.1
            || (cnt == best.1 && {
                let (d_new, d_old) = ((val - median).abs(), (best.0 - median).abs());
                d_new < d_old || (d_new == d_old && val > best.0)
            });
        if better {
            best = (val, cnt);
        }
        i = j;
    }
    Ok(best.0)
}

/// Table-style aggregates. Reorders `theta_sq`.
pub fn summarize(coverages: &[f64], lengths: &[f64], theta_sq: &mut [f64]) -> Result<Aggregates> {
    if coverages.is_empty() || lengths.is_empty() || theta_sq.is_empty() {
        return Err(Error::Empty);
    }
    let median_coverage = stats::median(&mut coverages.to_vec());
    Ok(Aggregates {
        modal_coverage: modal_value(coverages, median_coverage)?,
        median_coverage,
        median_length: stats::median(&mut lengths.to_vec()),
        median_theta_sq: stats::median(theta_sq),
        p95_theta_sq: stats::percentile_nearest_rank(theta_sq, 0.95),
    })
}

/// One row of the coverage table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub rho: f64,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub modal_coverage: f64,
    pub median_coverage: f64,
    pub median_length: f64,
    pub median_theta_sq: f64,
    pub p95_theta_sq: f64,
}

impl CellSummary {
    pub fn from_report(r: &SimReport) -> Self {
        Self {
            rho: r.config.rho,
            n: r.config.n,
            p: r.config.p,
            reps: r.config.reps,
            modal_coverage: r.aggregates.modal_coverage,
            median_coverage: r.aggregates.median_coverage,
            median_length: r.aggregates.median_length,
            median_theta_sq: r.aggregates.median_theta_sq,
            p95_theta_sq: r.aggregates.p95_theta_sq,
        }
    }
}

pub fn table1_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from(
        "rho,n,p,modal_coverage,median_coverage,median_length,median_theta_sq,p95_theta_sq\n",
    );
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.rho,
            c.n,
            c.p,
            c.modal_coverage,
            c.median_coverage,
            c.median_length,
            c.median_theta_sq,
            c.p95_theta_sq
        ));
    }
    s
}

/// `|b_ψ|`, coverage and mean length for every reported coefficient.
pub fn export_figure_data(report: &SimReport) -> String {
    let mut s = String::from("index,abs_bias,coverage,mean_length\n");
    for c in &report.coefficients {
        s.push_str(&format!(
            "{},{},{},{}\n",
            c.index, c.abs_bias, c.coverage, c.mean_length
        ));
    }
    s
}

/// The eight cells `ρ ∈ {0.9, 0.1}`, `n ∈ {70, 35}`, `p ∈ {2450, 1225}`,
/// high levels first. Each cell gets its own seed derived from
/// `master_seed`.
pub fn table1_preset(reps: usize, master_seed: u64) -> Vec<SimConfig> {
    let mut out = Vec::with_capacity(8);
    for rho in [0.9, 0.1] {
        for n in [70, 35] {
            for p in [2450, 1225] {
                let mut c = SimConfig::new(rho, n, p);
                c.reps = reps;
                c.master_seed = Some(rng::derive_seed(master_seed, Role::Design, out.len() as u64));
                out.push(c);
            }
        }
    }
    out
}

/// Main effects of the three factors, low level coded 0 and high level 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorEffects {
    /// Odds ratios for `(ρ, n, p)` on modal coverage.
    pub modal_coverage: [f64; 3],
    /// Odds ratios for `(ρ, n, p)` on median coverage.
    pub median_coverage: [f64; 3],
    /// Additive effects of `(ρ, n, p)` on median length.
    pub median_length: [f64; 3],
}

impl FactorEffects {
    pub fn to_csv(&self) -> String {
        let row = |name: &str, v: &[f64; 3]| format!("{name},{},{},{}\n", v[0], v[1], v[2]);
        let mut s = String::from("effect,rho,n,p\n");
        s.push_str(&row("modal_coverage", &self.modal_coverage));
        s.push_str(&row("median_coverage", &self.median_coverage));
        s.push_str(&row("median_length", &self.median_length));
        s
    }
}

const IRLS_MAX_ITER: usize = 100;
const IRLS_GRAD_TOL: f64 = 1e-10;
const IRLS_STEP_TOL: f64 = 1e-6;
const SEPARATION_EPS: f64 = 1e-12;

/// Binomial logistic regression by Newton–Raphson (Fisher scoring with the
/// canonical link). `proportions[i]` successes out of `trials[i]`.
/// Convergence is judged on the gradient of the log-likelihood divided by
/// the total number of trials, together with the Newton step size.
pub fn logistic_irls(
    x: &DMatrix<f64>,
    successes: &[f64],
    trials: &[f64],
) -> Result<DVector<f64>> {
    let (m, k) = x.shape();
    if successes.len() != m || trials.len() != m {
        return Err(Error::Dimension("logistic data length mismatch".into()));
    }
    let total: f64 = trials.iter().sum();
    let mut b = DVector::zeros(k);
    for _ in 0..IRLS_MAX_ITER {
        let eta = x * &b;
        let pi: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        if pi.iter().any(|&p| !(SEPARATION_EPS..=1.0 - SEPARATION_EPS).contains(&p)) {
            return Err(Error::Separation);
        }
        let resid = DVector::from_fn(m, |i, _| successes[i] - trials[i] * pi[i]);
        let grad = x.tr_mul(&resid);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..m {
            let wi = trials[i] * pi[i] * (1.0 - pi[i]);
            let row = x.row(i);
            info += row.transpose() * row * wi;
        }
        let step = linalg::spd_solve(info, &grad, "solving the logistic information system")?;
        // a diverging fit keeps taking unit steps while its gradient vanishes
        if grad.norm() / total < IRLS_GRAD_TOL && step.amax() < IRLS_STEP_TOL {
            return Ok(b);
        }
        b += step;
    }
    Err(Error::IrlsNonConvergence(IRLS_MAX_ITER))
}

fn factor_design(cells: &[CellSummary]) -> Result<DMatrix<f64>> {
    if cells.len() != 8 {
        return Err(Error::InvalidParameter(format!(
            "factorial effects need the 8 cells of a 2³ design, got {}",
            cells.len()
        )));
    }
    let levels = |f: &dyn Fn(&CellSummary) -> f64| -> Result<(f64, f64)> {
        let mut v: Vec<f64> = cells.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        if v.len() != 2 {
            return Err(Error::InvalidParameter(
                "each factor must take exactly two levels".into(),
            ));
        }
        Ok((v[0], v[1]))
    };
    let getters: [&dyn Fn(&CellSummary) -> f64; 3] =
        [&|c| c.rho, &|c| c.n as f64, &|c| c.p as f64];
    let mut x = DMatrix::from_element(8, 4, 1.0);
    let mut seen = [false; 8];
    for (f, g) in getters.iter().enumerate() {
        let (_, hi) = levels(*g)?;
        for (i, c) in cells.iter().enumerate() {
            x[(i, f + 1)] = if g(c) == hi { 1.0 } else { 0.0 };
        }
    }
    for i in 0..8 {
        let code = (x[(i, 1)] as usize) << 2 | (x[(i, 2)] as usize) << 1 | x[(i, 3)] as usize;
        if std::mem::replace(&mut seen[code], true) {
            return Err(Error::InvalidParameter(
                "cells do not cover every factor combination exactly once".into(),
            ));
        }
    }
    Ok(x)
}

/// Main effects over the eight cells of the factorial design. Coverage is
/// modelled as `round(coverage·reps)` successes out of `reps` trials.
pub fn factorial_effects(cells: &[CellSummary]) -> Result<FactorEffects> {
    let x = factor_design(cells)?;
    let trials: Vec<f64> = cells.iter().map(|c| c.reps as f64).collect();
    let odds = |f: &dyn Fn(&CellSummary) -> f64| -> Result<[f64; 3]> {
        let succ: Vec<f64> = cells
            .iter()
            .map(|c| (f(c) * c.reps as f64).round())
            .collect();
        let b = logistic_irls(&x, &succ, &trials)?;
        Ok([b[1].exp(), b[2].exp(), b[3].exp()])
    };
    let modal_coverage = odds(&|c| c.modal_coverage)?;
    let median_coverage = odds(&|c| c.median_coverage)?;
    let len = DVector::from_iterator(8, cells.iter().map(|c| c.median_length));
    let b = linalg::least_squares(&x, &len, "fitting length effects")?;
    Ok(FactorEffects {
        modal_coverage,
        median_coverage,
        median_length: [b[1], b[2], b[3]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        let mut c = SimConfig::new(0.5, 20, 40);
        c.reps = 200;
        c.n_report = Some(15);
        c.master_seed = Some(11);
        c
    }

    #[test]
    fn config_json_defaults_and_schema() {
        let c = SimConfig::from_json(r#"{"rho": 0.9, "n": 70, "p": 2450}"#).unwrap();
        assert_eq!((c.s, c.reps, c.n_report()), (5, 1000, 1000));
        assert_eq!((c.tau, c.alpha, c.delta, c.a), (1.0, 0.05, 1.0, 1.0));
        assert!(SimConfig::from_json(r#"{"rho": 1.0, "n": 70, "p": 10}"#).is_err());
        assert!(SimConfig::from_json(r#"{"schema": 2, "rho": 0.1, "n": 7, "p": 10}"#).is_err());
        assert!(SimConfig::from_json(r#"{"rho": 0.1, "n": 7, "p": 10, "bogus": 1}"#).is_err());
        assert!(SimConfig::from_json(r#"{"rho": 0.1, "n": 7, "p": 3}"#).is_err());
    }

    #[test]
    fn design_is_centered_and_correlated() {
        let mut c = SimConfig::new(0.9, 500, 50);
        c.master_seed = Some(3);
        let d = generate_design(&c, 3).unwrap();
        for j in 0..d.p() {
            assert!(d.column(j).sum().abs() < 1e-9);
        }
        let x = d.x();
        let norms: Vec<f64> = (0..50).map(|j| x.column(j).norm()).collect();
        let mut total = 0.0;
        for a in 0..50 {
            for b in a + 1..50 {
                total += x.column(a).dot(&x.column(b)) / (norms[a] * norms[b]);
            }
        }
        let mean = total / (50.0 * 49.0 / 2.0);
        assert!((mean - 0.9).abs() < 0.03, "mean correlation {mean}");

        let mut c0 = SimConfig::new(0.0, 500, 50);
        c0.master_seed = Some(3);
        let d0 = generate_design(&c0, 3).unwrap();
        let x0 = d0.x();
        let mut t0 = 0.0;
        for a in 0..50 {
            for b in a + 1..50 {
                t0 += x0.column(a).dot(&x0.column(b)) / (x0.column(a).norm() * x0.column(b).norm());
            }
        }
        assert!((t0 / 1225.0).abs() < 0.02);
    }

    #[test]
    fn runs_are_reproducible() {
        let c = small_cfg();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coefficients.len(), 15);
        assert!(a.variance_estimates.is_empty());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| run_experiment(&c)).unwrap();
        assert_eq!(a, single);
    }

    #[test]
    fn zero_noise_reproduces_bias() {
        let c = small_cfg();
        let r = run_experiment_with(&c, RunOptions { zero_noise: true }).unwrap();
        let z = inference::critical_value(c.alpha).unwrap();
        for coef in &r.coefficients {
            let hw = 0.5 * coef.mean_length;
            let expected = if coef.abs_bias < hw { 1.0 } else { 0.0 };
            if (coef.abs_bias - hw).abs() > 1e-12 {
                assert_eq!(coef.coverage, expected);
            }
            assert!(hw > 0.0 && z > 0.0);
        }
    }

    #[test]
    fn split_variance_records_estimates() {
        let mut c = small_cfg();
        c.variance = VarianceSource::Split;
        c.reps = 20;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.variance_estimates.len(), 20);
        assert!(r.mean_variance_estimate().unwrap() > 0.0);
    }

    #[test]
    fn mode_rules() {
        assert_eq!(modal_value(&[0.94, 0.94, 0.90], 0.94).unwrap(), 0.94);
        assert_eq!(modal_value(&[0.94, 0.94, 0.90, 0.90], 0.92).unwrap(), 0.94);
        assert_eq!(modal_value(&[0.94, 0.94, 0.90, 0.90], 0.91).unwrap(), 0.90);
        let agg = summarize(&[0.94, 0.94, 0.90], &[1.0, 2.0, 3.0], &mut [0.1, 0.2]).unwrap();
        assert_eq!(agg.median_coverage, 0.94);
        assert_eq!(agg.median_length, 2.0);
        assert!((agg.median_theta_sq - 0.15).abs() < 1e-15);
        assert_eq!(agg.p95_theta_sq, 0.2);
    }

    fn cells_with(f: impl Fn(usize) -> (f64, f64, f64)) -> Vec<CellSummary> {
        table1_preset(1000, 0)
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (modal, median, len) = f(i);
                CellSummary {
                    rho: c.rho,
                    n: c.n,
                    p: c.p,
                    reps: 1000,
                    modal_coverage: modal,
                    median_coverage: median,
                    median_length: len,
                    median_theta_sq: 0.0,
                    p95_theta_sq: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn identical_cells_have_no_effects() {
        let e = factorial_effects(&cells_with(|_| (0.94, 0.9, 1.2))).unwrap();
        for k in 0..3 {
            assert!((e.modal_coverage[k] - 1.0).abs() < 1e-10);
            assert!((e.median_coverage[k] - 1.0).abs() < 1e-10);
            assert!(e.median_length[k].abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_recovers_planted_model() {
        // exact probabilities from a known logistic model
        let truth = [0.3, 1.2, -0.4, 0.25];
        let x = factor_design(&cells_with(|_| (0.5, 0.5, 1.0))).unwrap();
        let trials = vec![1.0; 8];
        let succ: Vec<f64> = (0..8)
            .map(|i| {
                let eta: f64 = (0..4).map(|k| x[(i, k)] * truth[k]).sum();
                1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        let b = logistic_irls(&x, &succ, &trials).unwrap();
        for k in 0..4 {
            assert!((b[k].exp() - truth[k].exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn factorial_input_validation() {
        let mut cells = cells_with(|_| (0.9, 0.9, 1.0));
        assert!(factorial_effects(&cells[..7]).is_err());
        cells[7] = cells[6];
        assert!(factorial_effects(&cells).is_err());
        assert!(matches!(
            factorial_effects(&cells_with(|_| (1.0, 0.9, 1.0))),
            Err(Error::Separation)
        ));
    }

    #[test]
    fn exports_have_expected_shape() {
        let r = run_experiment(&small_cfg()).unwrap();
        let fig = export_figure_data(&r);
        assert_eq!(fig.lines().count(), 16);
        assert!(fig.starts_with("index,abs_bias,coverage,mean_length"));
        let t = table1_csv(&[CellSummary::from_report(&r)]);
        assert_eq!(t.lines().count(), 2);
    }
}
