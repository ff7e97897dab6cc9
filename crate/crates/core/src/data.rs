//! Response/design containers, CSV ingestion and column preprocessing.
//!
//! A [`Dataset`] owns the response vector and the design matrix together with
//! one label per design column. Preprocessing steps return new datasets and
//! never mutate in place.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    column_ids: Vec<String>,
    centered: bool,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, column_ids: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Empty);
        }
        if y.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "response has {} entries but design has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if column_ids.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} column labels for {} columns",
                column_ids.len(),
                x.ncols()
            )));
        }
        let mut seen = HashSet::with_capacity(column_ids.len());
        for id in &column_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateHeader(id.clone()));
            }
        }
        Ok(Self {
            y,
            x,
            column_ids,
            centered: false,
        })
    }

    /// Builds a dataset with generated labels `x0, x1, ...`.
    pub fn from_parts(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let ids = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, x, ids)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_ids(&self) -> &[String] {
        &self.column_ids
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.x.column(j)
    }

    /// The design with column `j` removed (`X₋ψ` for ψ = j).
    pub fn without_column(&self, j: usize) -> DMatrix<f64> {
        self.x.clone().remove_column(j)
    }

    /// Same design, new response. Used by simulations that keep `X` fixed.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "response has {} entries but design has {} rows",
                y.len(),
                self.n()
            )));
        }
        Ok(Self {
            y,
            x: self.x.clone(),
            column_ids: self.column_ids.clone(),
            centered: self.centered,
        })
    }

    /// Restricts the dataset to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Self {
            y,
            x,
            column_ids: self.column_ids.clone(),
            centered: false,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            y: self.y.clone(),
            x: self.x.select_columns(cols),
            column_ids: cols.iter().map(|&j| self.column_ids[j].clone()).collect(),
            centered: self.centered,
        }
    }

    pub(crate) fn mark_centered(mut self) -> Self {
        self.centered = true;
        self
    }
}

/// Reads a headed, comma-separated file. The response column is pulled out
/// and the remaining columns keep their file order.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, response_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, response_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateHeader(h.clone()));
        }
    }
    let response_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingResponse(response_column.to_owned()))?;

    let width = headers.len();
    let mut values: Vec<f64> = Vec::new();
    let mut nrows = 0usize;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // data rows are numbered from 1, the header being row 0
        let row = r + 1;
        if record.len() != width {
            return Err(Error::RaggedRow {
                row,
                found: record.len(),
                expected: width,
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: headers[c].clone(),
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row,
                    column: headers[c].clone(),
                    value: cell.to_owned(),
                });
            }
            values.push(v);
        }
        nrows += 1;
    }
    if nrows == 0 || width < 2 {
        return Err(Error::Empty);
    }

    let p = width - 1;
    let y = DVector::from_fn(nrows, |i, _| values[i * width + response_idx]);
    let x = DMatrix::from_fn(nrows, p, |i, j| {
        let c = if j < response_idx { j } else { j + 1 };
        values[i * width + c]
    });
    let ids = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::new(y, x, ids)
}

/// Writes the dataset with the response first. Values are printed with 17
/// significant digits so that reading the file back is exact.
pub fn write_csv<W: Write>(d: &Dataset, response_label: &str, mut out: W) -> Result<()> {
    let io = |source| Error::Io {
        path: "<csv output>".into(),
        source,
    };
    let mut header = String::from(response_label);
    for id in d.column_ids() {
        header.push(',');
        header.push_str(id);
    }
    writeln!(out, "{header}").map_err(io)?;
    let mut line = String::new();
    for i in 0..d.n() {
        line.clear();
        line.push_str(&format!("{:.16e}", d.y[i]));
        for j in 0..d.p() {
            line.push_str(&format!(",{:.16e}", d.x[(i, j)]));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Subtracts each column's sample mean. `Y` is left alone.
pub fn center_columns(d: &Dataset) -> Dataset {
    let mut x = d.x.clone();
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    Dataset {
        y: d.y.clone(),
        x,
        column_ids: d.column_ids.clone(),
        centered: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseGroup {
    pub head: usize,
    pub members: Vec<usize>,
    pub correlations: Vec<f64>,
}

impl CollapseGroup {
    /// Group size including the retained head.
    pub fn size(&self) -> usize {
        1 + self.members.len()
    }
}

/// Which columns survived a collapse and what they absorbed. Only heads that
/// absorbed at least one column appear in `groups`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseMap {
    pub retained: Vec<usize>,
    pub groups: Vec<CollapseGroup>,
}

impl CollapseMap {
    pub fn collapsed_count(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Merges runs of adjacent, highly correlated columns into their first member.
///
/// Single left-to-right pass: each column is compared with the head of the
/// current run; if `|corr| > threshold` it joins the run, otherwise it starts
/// a new one.
pub fn collapse_correlated(d: &Dataset, threshold: f64) -> Result<(Dataset, CollapseMap)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "collapse threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let centered;
    let d = if d.is_centered() {
        d
    } else {
        centered = center_columns(d);
        &centered
    };

    let norms: Vec<f64> = d.x.column_iter().map(|c| c.norm()).collect();
    for (j, &nrm) in norms.iter().enumerate() {
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::ZeroVariance(d.column_ids[j].clone()));
        }
    }

    let mut retained = Vec::new();
    let mut groups: Vec<CollapseGroup> = Vec::new();
    let mut current: Option<CollapseGroup> = None;
    for j in 0..d.p() {
        if let Some(g) = current.as_mut() {
            let head = g.head;
            let corr = d.x.column(head).dot(&d.x.column(j)) / (norms[head] * norms[j]);
            if corr.abs() > threshold {
                g.members.push(j);
                g.correlations.push(corr);
                continue;
            }
        }
        if let Some(g) = current.take() {
            if !g.members.is_empty() {
                groups.push(g);
            }
        }
        retained.push(j);
        current = Some(CollapseGroup {
            head: j,
            members: Vec::new(),
            correlations: Vec::new(),
        });
    }
    if let Some(g) = current.take() {
        if !g.members.is_empty() {
            groups.push(g);
        }
    }

    let reduced = d.select_columns(&retained);
    Ok((reduced.mark_centered(), CollapseMap { retained, groups }))
}
