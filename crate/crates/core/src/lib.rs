//! Tree-guided selection and logic aggregation of rare binary features.
//!
//! Given a feature hierarchy and a sparse 0/1 design, this crate expands the
//! tree with "or"-interaction columns, reparameterizes the coefficients along
//! root-to-leaf paths, and fits the resulting group-sparse problem with a
//! smoothing proximal gradient (FISTA) solver for squared-error or weighted
//! logistic loss. On top of the estimator sit cross-validation over the
//! `(alpha, lambda)` grid, extraction of the selected aggregation pattern
//! (which feature blocks collapse into a single or-feature, which drop), and
//! a simulation harness with evaluation metrics.
//!
//! The pipeline, end to end:
//!
//! 1. [`tree`]: parse and validate the hierarchy (nested JSON or TSV edges).
//! 2. [`expansion`]: attach interaction leaves and build the expanded design.
//! 3. [`reparam`]: path matrix `A`, feature weights, penalty groups.
//! 4. [`solver`]: smoothed FISTA fits.
//! 5. [`tuning`]: `lambda*` bound and k-fold cross-validation.
//! 6. [`selection`]: group thresholding, coarsest aggregation, DOT export.
//! 7. [`simgen`] / [`metrics`] / [`bench`]: synthetic studies and scoring.

pub mod bench;
pub mod design;
pub mod error;
pub mod expansion;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reparam;
pub mod rng;
pub mod selection;
pub mod simgen;
pub mod solver;
pub mod tree;
pub mod tuning;

pub use error::{Error, Result};
