//! Numerical toolkit for the weak-coupling (van Hove) limit of finite
//! system-bath models.
//!
//! A model is a finite-dimensional system coupled to a finite-dimensional
//! bath through `H = H_S (x) 1 + 1 (x) H_R + lambda W (x) V`, with the bath
//! prepared in a rank-one invariant state. The crate builds the
//! Nakajima-Zwanzig projections for that state, expands the memory kernel of
//! the rescaled propagator into time-ordered simplex integrals, re-expresses
//! each order through bath correlators summed over contiguous partitions,
//! assembles the averaged second-order (Davies) generator, and evaluates the
//! integral estimates that control the expansion term by term.
//!
//! Every identity the expansion relies on is checked two ways: a brute-force
//! route that multiplies projected superoperators directly, and a structured
//! route that only touches system operators and scalar bath correlators. The
//! acceptance suite in `tests/` pins the agreement tolerances.

// Guards of the form `!(x > 0.0)` reject NaN along with the out-of-range
// values; the `partial_cmp` spelling clippy prefers would bury that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod davies;
pub mod diagram;
pub mod dyson;
pub mod model;
pub mod nz;
pub mod opcore;

mod quad;

pub use opcore::{Operator, SuperOperator, C64};

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or dimension requirements violated (non-square input, length
    /// that is not a perfect square, mismatched factor dimensions).
    #[error("dimension error: {0}")]
    Dim(String),

    /// An operator failed a structural requirement (Hermiticity, trace
    /// normalization, sortedness of a time vector, an invalid subset or
    /// partition description).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A request outside the supported range (expansion order above the
    /// brute-force cap, zero coupling where a rescaling divides by it).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Model validation failures, one message per failed check.
    #[error("model validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// Run configuration could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
