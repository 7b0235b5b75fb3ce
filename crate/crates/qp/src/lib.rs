//! Dense-interface convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀHx + fᵀx
//!     subject to  Ax ≤ b
//!                 lb ≤ x ≤ ub
//! ```
//!
//! for symmetric positive-semidefinite `H` with a primal-dual interior-point
//! method. Problems are passed as dense matrices; internally the KKT system is
//! assembled sparsely and factored with an ordered LDLᵀ, so problems with many
//! short rows (scenario constraints, epigraph variables) stay cheap.
//!
//! A returned [`QpStatus::Infeasible`] is always backed by evidence: either an
//! all-zero row with a negative right-hand side, a Farkas-type dual ray, or a
//! phase-one elastic LP whose optimal violation is strictly positive.

#![allow(clippy::needless_range_loop)] // index loops read closer to the maths here

mod ipm;
mod kkt;
mod ldl;
mod problem;

pub use ipm::{solve, QpSolver};
pub use kkt::{kkt_report, KktReport};
pub use problem::{
    Multipliers, QpProblem, QpSolution, QpStatus, CONVEXITY_TOL, SYMMETRY_TOL,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains NaN or infinite coefficients")]
    NonFinite,
    #[error("H is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("lower bound {lower} exceeds upper bound {upper} at index {index}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
    #[error("H is not positive semidefinite (eigenvalue {min_eigenvalue:e})")]
    NonConvex { min_eigenvalue: f64 },
    #[error("KKT factorization failed")]
    Numerical,
}
