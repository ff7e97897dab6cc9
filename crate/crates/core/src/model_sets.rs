//! Confidence sets of low-dimensional models.
//!
//! Every proper subset of an encompassing variable set `Ŝ` with at most
//! `max_size` members is F-tested against the encompassing fit; subsets that
//! are not rejected form the confidence set. A second pass keeps only the
//! models whose fitted coefficients sit inside the marginal confidence
//! intervals of an [`InferenceReport`].
//!
//! All fitted models carry an intercept.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{InferenceReport, Screen};
use crate::linalg;
use crate::stats;

/// Largest number of candidate models that will be enumerated.
pub const MAX_CANDIDATES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefs: DVector<f64>,
    pub rss: f64,
    pub df: usize,
}

/// Ordinary least squares of `y` on the columns of `xsub`, as given.
pub fn ols_fit(y: &DVector<f64>, xsub: &DMatrix<f64>) -> Result<OlsFit> {
    let (n, k) = xsub.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }
    if k >= n {
        return Err(Error::DegenerateDf(format!(
            "{k} columns leave no residual degrees of freedom on {n} rows"
        )));
    }
    let coefs = linalg::least_squares(xsub, y, "fitting a submodel")?;
    let rss = (y - xsub * &coefs).norm_squared();
    Ok(OlsFit { coefs, rss, df: n - k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub f: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
}

/// Residual sums of squares at rounding level relative to `‖y‖²`.
fn is_saturated(rss: f64, y: &DVector<f64>) -> bool {
    rss <= 1e-24 * y.norm_squared()
}

fn f_from_fits(sub: &OlsFit, enc: &OlsFit) -> Result<FTest> {
    if sub.df <= enc.df {
        return Err(Error::DegenerateDf(format!(
            "submodel has {} residual df, encompassing model {}; the submodel must be strictly smaller",
            sub.df, enc.df
        )));
    }
    if enc.rss <= 0.0 {
        return Err(Error::SaturatedFit);
    }
    let df_num = sub.df - enc.df;
    let df_den = enc.df;
    let f = (((sub.rss - enc.rss) / df_num as f64) / (enc.rss / df_den as f64)).max(0.0);
    Ok(FTest {
        f,
        p_value: stats::f_upper_tail(f, df_num as f64, df_den as f64),
        df_num,
        df_den,
    })
}

/// F-test of a nested submodel design against the encompassing design.
pub fn f_test(y: &DVector<f64>, x_enc: &DMatrix<f64>, x_sub: &DMatrix<f64>) -> Result<FTest> {
    let enc = ols_fit(y, x_enc)?;
    if is_saturated(enc.rss, y) {
        return Err(Error::SaturatedFit);
    }
    let sub = ols_fit(y, x_sub)?;
    f_from_fits(&sub, &enc)
}

/// Intercept followed by the listed columns of `x`.
fn design_with_intercept(x: &DMatrix<f64>, columns: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut m = DMatrix::from_element(n, columns.len() + 1, 1.0);
    for (c, &j) in columns.iter().enumerate() {
        m.set_column(c + 1, &x.column(j));
    }
    m
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of proper, nonempty subsets of an `s`-set with at most `max_size`
/// elements.
pub fn candidate_count(s: usize, max_size: usize) -> u128 {
    let top = max_size.min(s.saturating_sub(1));
    (1..=top as u128).map(|k| binomial(s as u128, k)).sum()
}

/// All `k`-subsets of `items` in lexicographic order.
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMember {
    /// Design column indices, ascending.
    pub variables: Vec<usize>,
    pub f_stat: f64,
    pub p_value: f64,
    /// OLS coefficients aligned with `variables` (intercept omitted).
    pub ols_coefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfidenceSet {
    /// `Ŝ`, ascending.
    pub encompassing: Vec<usize>,
    pub alpha_f: f64,
    pub max_size: usize,
    /// Number of submodels tested.
    pub candidates: u128,
    pub members: Vec<ModelMember>,
    /// Indices into `members` that passed the interval filter, if it has run.
    pub ci_compatible: Option<Vec<usize>>,
    /// Interval widening used by the filter.
    pub ci_slack: Option<f64>,
}

impl ModelConfidenceSet {
    pub fn compatible_members(&self) -> Vec<&ModelMember> {
        self.ci_compatible
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|&i| &self.members[i])
            .collect()
    }

    pub fn contains_model(&self, variables: &[usize]) -> bool {
        self.members.iter().any(|m| m.variables == variables)
    }

    pub fn is_compatible(&self, variables: &[usize]) -> bool {
        self.compatible_members()
            .iter()
            .any(|m| m.variables == variables)
    }

    /// One row per model and one column per variable of `Ŝ`, with `*` for
    /// included and `-` for excluded variables. `labels` names design columns.
    pub fn to_table_csv(&self, labels: &[String], compatible_only: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_owned()];
        for &v in &self.encompassing {
            header.push(labels.get(v).cloned().unwrap_or_else(|| format!("x{v}")));
        }
        w.write_record(&header)?;
        let rows: Vec<&ModelMember> = if compatible_only {
            self.compatible_members()
        } else {
            self.members.iter().collect()
        };
        for (r, m) in rows.iter().enumerate() {
            let mut rec = vec![(r + 1).to_string()];
            for v in &self.encompassing {
                rec.push(if m.variables.contains(v) { "*" } else { "-" }.to_owned());
            }
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Csv(csv::Error::from(e.into_error())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn normalize_s_hat(s_hat: &[usize], p: usize) -> Result<Vec<usize>> {
    let mut s = s_hat.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != s_hat.len() {
        return Err(Error::InvalidParameter("encompassing set has duplicate indices".into()));
    }
    if let Some(&bad) = s.iter().find(|&&v| v >= p) {
        return Err(Error::InvalidParameter(format!(
            "encompassing variable {bad} out of range for {p} columns"
        )));
    }
    Ok(s)
}

/// F-tests every proper subset of `s_hat` with `1..=max_size` variables
/// against the encompassing model and keeps those with `p > alpha_f`.
///
/// Candidates are fitted in parallel; members come back in lexicographic
/// order by size and then by variable indices.
pub fn enumerate_confidence_set(
    y: &DVector<f64>,
    d: &Dataset,
    s_hat: &[usize],
    alpha_f: f64,
    max_size: usize,
) -> Result<ModelConfidenceSet> {
    if y.len() != d.n() {
        return Err(Error::Dimension(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            d.n()
        )));
    }
    if !(0.0..=1.0).contains(&alpha_f) {
        return Err(Error::InvalidParameter(format!(
            "alpha_F must lie in [0, 1], got {alpha_f}"
        )));
    }
    let s = normalize_s_hat(s_hat, d.p())?;
    if s.is_empty() {
        return Err(Error::InvalidParameter("encompassing set is empty".into()));
    }
    if max_size == 0 || max_size > s.len() {
        return Err(Error::InvalidParameter(format!(
            "max_size must lie in 1..={}, got {max_size}",
            s.len()
        )));
    }
    if s.len() + 1 >= d.n() {
        return Err(Error::DegenerateDf(format!(
            "encompassing model with {} variables and an intercept needs more than {} rows",
            s.len(),
            d.n()
        )));
    }
    let candidates = candidate_count(s.len(), max_size);
    if candidates > MAX_CANDIDATES {
        return Err(Error::TooManyCandidates {
            candidates,
            limit: MAX_CANDIDATES,
        });
    }

    let enc = ols_fit(y, &design_with_intercept(d.x(), &s))?;
    if is_saturated(enc.rss, y) {
        return Err(Error::SaturatedFit);
    }
    let top = max_size.min(s.len() - 1);
    let subsets: Vec<Vec<usize>> = (1..=top).flat_map(|k| combinations(&s, k)).collect();
    debug_assert_eq!(subsets.len() as u128, candidates);

    let tested = subsets
        .into_par_iter()
        .map(|vars| {
            let fit = ols_fit(y, &design_with_intercept(d.x(), &vars))?;
            let t = f_from_fits(&fit, &enc)?;
            Ok(ModelMember {
                ols_coefs: fit.coefs.iter().skip(1).copied().collect(),
                variables: vars,
                f_stat: t.f,
                p_value: t.p_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let members = tested
        .into_iter()
        .filter(|m| alpha_f == 0.0 || m.p_value > alpha_f)
        .collect();

    Ok(ModelConfidenceSet {
        encompassing: s,
        alpha_f,
        max_size,
        candidates,
        members,
        ci_compatible: None,
        ci_slack: None,
    })
}

/// Keeps members whose every OLS coefficient lies in its variable's
/// interval, widened about its center by the factor `slack`.
pub fn ci_compatibility_filter(
    set: &ModelConfidenceSet,
    report: &InferenceReport,
    slack: f64,
) -> Result<ModelConfidenceSet> {
    if !(slack > 0.0 && slack.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "slack must be positive, got {slack}"
        )));
    }
    let mut bounds = std::collections::HashMap::new();
    for &v in &set.encompassing {
        let r = report.record(v).ok_or(Error::MissingInterval(v))?;
        let mid = 0.5 * (r.ci_lower + r.ci_upper);
        let hw = 0.5 * (r.ci_upper - r.ci_lower) * slack;
        bounds.insert(v, (mid - hw, mid + hw));
    }
    let mut keep = Vec::new();
    for (i, m) in set.members.iter().enumerate() {
        let mut ok = true;
        for (v, c) in m.variables.iter().zip(&m.ols_coefs) {
            let (lo, hi) = *bounds.get(v).ok_or(Error::MissingInterval(*v))?;
            if !(lo <= *c && *c <= hi) {
                ok = false;
                break;
            }
        }
        if ok {
            keep.push(i);
        }
    }
    let mut out = set.clone();
    out.ci_compatible = Some(keep);
    out.ci_slack = Some(slack);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySelection {
    /// Variables kept in at least `threshold` of the repeats, ascending.
    pub selected: Vec<usize>,
    /// Selection frequency per design column.
    pub frequencies: Vec<f64>,
    pub reps: usize,
    pub size: usize,
    pub threshold: f64,
}

/// Default screening size `⌊n/3⌋`.
pub fn default_screen_size(n: usize) -> usize {
    n / 3
}

/// Runs `screen` on one half of `reps` seeded row bisections and keeps the
/// variables chosen at least `threshold` of the time.
pub fn stability_screen(
    d: &Dataset,
    screen: &dyn Screen,
    size: usize,
    reps: usize,
    threshold: f64,
    seed: u64,
) -> Result<StabilitySelection> {
    if reps == 0 {
        return Err(Error::InvalidParameter("stability screening needs at least one repeat".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if size == 0 || size > d.p() {
        return Err(Error::InvalidParameter(format!(
            "screen size must lie in 1..={}, got {size}",
            d.p()
        )));
    }
    let counts = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (half, _) = crate::inference::bisect_rows(d.n(), seed, r as u64);
            let xs = d.x().select_rows(&half);
            let ys = DVector::from_iterator(half.len(), half.iter().map(|&i| d.y()[i]));
            screen.select(&xs, &ys, size)
        })
        .try_fold(
            || vec![0usize; d.p()],
            |mut acc, chosen| {
                for j in chosen? {
                    acc[j] += 1;
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0usize; d.p()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / reps as f64).collect();
    let selected = (0..d.p()).filter(|&j| frequencies[j] >= threshold).collect();
    Ok(StabilitySelection {
        selected,
        frequencies,
        reps,
        size,
        threshold,
    })
}
