use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("response column '{0}' not found in header")]
    MissingResponse(String),

    #[error("duplicate header '{0}'")]
    DuplicateHeader(String),

    #[error("non-numeric cell at row {row}, column '{column}': '{value}'")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("dataset has no rows or no predictor columns")]
    Empty,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column '{0}' has zero variance")]
    ZeroVariance(String),

    #[error("singular system while {0}")]
    Singular(String),

    #[error("rank-deficient design while {0}")]
    RankDeficient(String),

    #[error("projector forms disagree by {max_diff:e} (tolerance {tolerance:e})")]
    FormDisagreement { max_diff: f64, tolerance: f64 },

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("encompassing model fits exactly (residual sum of squares is zero)")]
    SaturatedFit,

    #[error("degenerate degrees of freedom: {0}")]
    DegenerateDf(String),

    #[error("{candidates} candidate models exceed the enumeration limit of {limit}")]
    TooManyCandidates { candidates: u128, limit: u128 },

    #[error("no confidence interval for variable {0}")]
    MissingInterval(usize),

    #[error("IRLS did not converge within {0} iterations")]
    IrlsNonConvergence(usize),

    #[error("complete or quasi-complete separation in logistic fit")]
    Separation,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the numerical state of a problem rather than
    /// by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::RankDeficient(_)
                | Error::FormDisagreement { .. }
                | Error::EigenNonConvergence
                | Error::SaturatedFit
                | Error::DegenerateDf(_)
                | Error::IrlsNonConvergence(_)
                | Error::Separation
        )
    }
}
