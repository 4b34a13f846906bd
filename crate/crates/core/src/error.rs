//! Crate-wide error type.
//!
//! Simulation and fitting routines share one error enum so callers can match
//! on failure class without tracking per-module error types.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Kernel mass at or above one: the event cascade has no stationary regime.
    #[error("unstable kernel: L1 norm {norm} >= 1")]
    Unstable { norm: f64 },

    /// An event simulation exceeded its hard event budget.
    #[error("event cap {cap} exceeded at t = {t}")]
    EventCapExceeded { cap: usize, t: f64 },

    /// A special-function evaluation left the representable range.
    #[error("overflow evaluating {what} at x = {x}")]
    Overflow { what: &'static str, x: f64 },

    /// A discrete grid is too coarse for the requested tolerance.
    #[error("grid too coarse: {reason}")]
    GridTooCoarse { reason: String },

    /// A truncation horizon leaves more tail mass than the caller allows.
    #[error("tail tolerance violated: bound {bound} exceeds allowance {allowance}")]
    TailTolerance { bound: f64, allowance: f64 },

    /// An adaptive step or quadrature refinement failed to meet its tolerance.
    #[error("accuracy failure in {what}: estimate {estimate} above tolerance {tolerance}")]
    Accuracy {
        what: String,
        estimate: f64,
        tolerance: f64,
    },

    /// A root or inverse lies outside the bracketable range.
    #[error("range error in {what}: {reason}")]
    Range { what: &'static str, reason: String },

    /// A path-level bookkeeping invariant failed during an audit.
    #[error("audit failure: {0}")]
    Audit(String),

    /// A regression or fit has a degenerate design (no spread in the inputs).
    #[error("degenerate fit input: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
