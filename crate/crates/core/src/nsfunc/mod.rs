//! Nonsmooth function classes and their generalized derivatives.

mod expr;
mod poly;
mod regularity;
mod subdiff;

pub use expr::{CompNode, CompTerm, FuncExpr, Phi, PwUni, SmoothPiece, WeightedTerm};
pub use poly::Poly;
pub use regularity::{
    clarke_dir_estimate, expansion_residual, regularity_check, DirectionCheck, KinkViolation,
    RegularityReport, ESTIMATE_STEPS, REGULARITY_TOL,
};
pub use subdiff::{
    active_set, clarke_dir_deriv, dir_deriv, subdifferential, ActiveSet, GeneratorPolytope,
    Tolerances,
};

pub(crate) use expr::dot;
