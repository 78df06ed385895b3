use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid expression: {0}")]
    InvalidExpr(String),

    #[error("generator blowup: {count} generators exceed the cap of {cap}")]
    GeneratorBlowup { count: usize, cap: usize },

    #[error("invalid linear program: {0}")]
    InvalidLp(String),

    #[error("objective is not piecewise linear and convex: {0}")]
    NotPiecewiseLinear(String),

    #[error("objective is not convex: {0}")]
    NonConvexLeaf(String),

    #[error("projection onto the feasible set failed to converge")]
    ProjectionFailure,

    #[error("grid oracle supports at most 3 variables, got {0}")]
    DimensionTooLarge(usize),

    #[error("no KKT point: 0 is not in the subdifferential plus the active normal cone")]
    NoKktPoint,

    #[error("multiplier set is unbounded (dependent active constraint normals)")]
    UnboundedMultipliers,

    #[error("base problem could not be solved: {0}")]
    BaseUnsolved(String),

    #[error("need at least {needed} usable rows, found {found}")]
    InsufficientRows { needed: usize, found: usize },

    #[error("unsupported cost model: {0}")]
    UnsupportedCost(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}
