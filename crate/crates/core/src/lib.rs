//! Solvers and estimate diagnostics for non-divergence form elliptic
//! equations whose leading coefficients are merely measurable in `x¹` and of
//! vanishing mean oscillation in the remaining variables.

pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod halfspace;
pub mod krylov;
pub mod manufactured;
pub mod mode_solver;
pub mod vmo;
pub mod whole_space;

pub use error::{Error, Result};
