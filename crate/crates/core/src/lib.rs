//! Risk-budgeted safety filtering for a kinematic vehicle.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: unicycle and pedestrian motion, reference-path geometry.
//! - [`barrier`]: the distance barrier, its affine residual and the
//!   discrete comparison arithmetic.
//! - [`filters`]: the relaxed CBF filter and the CVaR-constrained filters.
//! - [`monitor`]: bad-step classification, the sliding window and the
//!   window certificate.
//! - [`supervisor`]: feasibility- and quality-triggered switching.
//! - [`mpc`]: the nominal path-tracking controller.

#![allow(clippy::needless_range_loop)]

pub mod barrier;
pub mod dynamics;
pub mod filters;
pub mod monitor;
pub mod mpc;
pub mod supervisor;

pub use riskgate_qp as qp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate geometry: look-ahead point coincides with obstacle")]
    DegenerateGeometry,
    #[error("invalid reference path: {0}")]
    InvalidPath(String),
    #[error("failed to read reference path: {0}")]
    PathIo(String),
    #[error(transparent)]
    Qp(#[from] riskgate_qp::QpError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
