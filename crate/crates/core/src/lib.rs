//! Exact computer algebra for Poisson vertex algebras built from matrix
//! pseudodifferential operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffalg`] — differential polynomials in generators `u_{i,ab}` and their
//!   derivatives, over exact rationals.
//! * [`lambda`] — polynomial lambda-values with an optional nonlocal tail,
//!   the carrier type for lambda-brackets.
//! * [`psido`] — matrix pseudodifferential operators with truncated symbol
//!   calculus: composition, adjoint, residues, roots, inverses.
//! * [`pva`] — Poisson vertex algebra structures: master formula evaluation,
//!   skew-symmetry / Jacobi / compatibility residuals, local functionals and
//!   Hamiltonian flows.
//! * [`agd`] — the bi-Poisson structures attached to a generic operator of
//!   fixed order: closed-form tables, the residue oracle, Dirac reduction,
//!   Virasoro data and constraint operators.
//! * [`hierarchy`] — conserved densities, Lax and bracket flows, the
//!   Lenard-Magri scheme and named reduced PDE checks.
//! * [`miura`] — factorisation maps into first-order operators and their
//!   homomorphism residuals.
//! * [`render`] — plain-text and LaTeX printing of all of the above.

pub mod agd;
pub mod diffalg;
pub mod hierarchy;
pub mod lambda;
pub mod miura;
pub mod psido;
pub mod pva;
pub mod render;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed textual or JSON input.
    #[error("parse error: {0}")]
    Parse(String),
    /// The requested operation is outside the supported fragment.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A matrix that must be inverted is singular.
    #[error("singular: {0}")]
    Singular(String),
    /// A truncated expansion is too shallow for the requested output.
    #[error("truncation too shallow: {0}")]
    Truncation(String),
    /// A structure name that the registry does not know.
    #[error("unknown structure: {0}")]
    UnknownStructure(String),
    /// Incompatible sizes or index ranges.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Two independent computations of the same quantity disagree.
    #[error("cross-check failed: {0}")]
    CrossCheck(String),
}

pub type Result<T> = std::result::Result<T, Error>;
