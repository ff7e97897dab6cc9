//! Coefficient-wise inference for high-dimensional linear regression by
//! approximate orthogonalization.
//!
//! Each coefficient is treated in turn as the interest parameter. A closed
//! form ridge-type vector `q_ψ` nearly orthogonalizes its column against all
//! others, after which `ψ̃ = qᵀY / qᵀx_ψ` is an ordinary simple-regression
//! estimate with a known variance factor and a bounded bias.
//!
//! Modules:
//! - [`data`]: datasets, CSV ingestion, centering and correlated-column collapse
//! - [`ortho`]: debiasing vectors, projector identities, Hessian check
//! - [`inference`]: estimates, intervals, pivots, variance estimation
//! - [`model_sets`]: F-test confidence sets of models and the interval filter
//! - [`simlab`]: the equicorrelated-design coverage experiments

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod inference;
mod linalg;
pub mod model_sets;
pub mod ortho;
pub mod rng;
pub mod simlab;
pub mod stats;

pub use data::{center_columns, collapse_correlated, load_csv, CollapseMap, Dataset};
pub use error::{Error, Result};
pub use ortho::{compute_q, OrthoConfig, OrthoSolution};
