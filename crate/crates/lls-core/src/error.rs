//! Error types shared across the library.

use thiserror::Error;

/// Errors from geometry, operator algebra, and the step loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid lattice spec: {0}")]
    InvalidLattice(String),

    #[error("invalid rectangle: {0}")]
    InvalidRectangle(String),

    #[error("rectangles are disjoint; minimal enclosing rectangle is undefined")]
    DisjointRectangles,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("operator support {0} not contained in target region {1}")]
    SupportNotContained(String, String),

    #[error("operator validation failed: {0}")]
    OperatorValidation(String),

    #[error("model construction failed: {0}")]
    Model(String),

    #[error("invariant breach: {0}")]
    InvariantBreach(String),

    #[error("spectral gap {gap} fell below the configured floor {floor} at step {step}")]
    GapCollapse { gap: f64, floor: f64, step: String },

    #[error("series divergence detected at order {order}: term norms non-decreasing for 3 consecutive orders (coupling outside the convergence radius?)")]
    SeriesDivergence { order: usize },

    #[error("adjoint series did not converge within {n_max} terms (last term norm {last_norm:.3e})")]
    SeriesNonConvergence { n_max: usize, last_norm: f64 },

    #[error("eigensolver failed to converge: achieved residual {residual:.3e}")]
    EigensolverFailure { residual: f64 },

    #[error("dimension {dim} exceeds the configured budget {budget}")]
    DimensionBudget { dim: usize, budget: usize },

    #[error("missing cache entry: {0}")]
    MissingCacheEntry(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
