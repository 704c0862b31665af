//! Penalized B-spline regression engine: cubic bases, marginal-centered
//! tensor interaction bases, second-order difference penalties, penalized
//! least squares with effective-degrees-of-freedom accounting, and grid
//! based smoothing-parameter selection.

mod basis;
mod design;
mod fit;
mod select;

pub use basis::{BSplineBasis, KnotPlacement, TensorInteractionBasis};
pub use design::{DesignBlock, PenalizedTerm, Sparse1dDesign};
pub use fit::{
    fit_penalized_ls, fit_with_system, EdfMode, FitOptions, PenalizedFit, PenalizedSystem,
    SystemSolution,
};
pub use select::{
    default_lambda_grid, select_smoothing, select_smoothing_with_system, Criterion, SelectOptions,
    SelectionResult,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {need} distinct values to place {k} basis functions, got {got}")]
    InsufficientDistinctValues { need: usize, k: usize, got: usize },
    #[error("singular system while factorizing term `{term}`: {detail}")]
    SingularSystem { term: String, detail: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient data: {rows} rows for {edf:.1} effective degrees of freedom")]
    InsufficientData { rows: usize, edf: f64 },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Builds the second-order difference matrix D ((k-2) x k) whose rows apply
/// the stencil `[1, -2, 1]` to adjacent coefficients.
pub fn second_difference_matrix(k: usize) -> ndarray::Array2<f64> {
    assert!(k >= 3);
    let mut d = ndarray::Array2::zeros((k - 2, k));
    for i in 0..k - 2 {
        d[[i, i]] = 1.0;
        d[[i, i + 1]] = -2.0;
        d[[i, i + 2]] = 1.0;
    }
    d
}

/// Second-order difference penalty S = D^T D.
pub fn second_difference_penalty(k: usize) -> ndarray::Array2<f64> {
    let d = second_difference_matrix(k);
    d.t().dot(&d)
}
