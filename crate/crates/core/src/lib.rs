//! Subdifferential calculus for max-of-smooth, monotone-composition and
//! univariate piecewise-smooth functions, Lagrangian multiplier sets for
//! linearly constrained minimization, shadow-price bound verification by
//! constraint perturbation, and dual-decomposition electricity pricing.

pub mod error;
pub mod kkt;
pub mod lp;
pub mod nsfunc;
pub mod pricing;
pub mod schema;
pub mod shadow;
pub mod solver;

pub use error::{Error, Result};
