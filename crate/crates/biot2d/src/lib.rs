//! Mixed finite element solver for the quasi-static Biot consolidation model
//! in three-field form (displacement, seepage velocity, pore pressure) on
//! uniform rectangular meshes of the unit square.
//!
//! The discretization is the strongly mass-conserving triplet
//! `RT_k x RT_k x Q_k`: both vector fields live in H(div)-conforming
//! Raviart-Thomas spaces whose divergence equals the discontinuous pressure
//! space, so the discrete mass balance holds pointwise. The displacement
//! block uses an interior-penalty form for the strain term.
//!
//! The resulting symmetric indefinite systems are solved by full GMRES with
//! monolithic overlapping Schwarz preconditioners built from vertex patches
//! and a nested coarse space: additive, multiplicative two-level, and a
//! multiplicative multilevel variant. Local and coarse solves are
//! kernel-aware (the pressure is only determined up to a constant when the
//! storage coefficient vanishes).
//!
//! Modules follow the pipeline: [`mesh`] and [`spaces`] build the geometry
//! and DOF structure, [`forms`] assembles operators, [`schwarz`] and
//! [`krylov`] solve, [`oracle`] provides independent dense verification, and
//! [`bench`] drives the manufactured-solution parameter studies.

pub mod bench;
pub mod forms;
pub mod krylov;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod schwarz;
pub mod spaces;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameter: {0}")]
    InvalidMesh(String),
    #[error("invalid space configuration: {0}")]
    InvalidSpace(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dense problem too large: {size} exceeds cap {cap}")]
    Oversized { size: usize, cap: usize },
    #[error("SVD did not converge")]
    SvdFailure,
    #[error("sparse factorization failed: {0}")]
    SparseFactorization(String),
    #[error(
        "local solver kernel mismatch on {what}: expected dimension {expected}, found {found}"
    )]
    KernelMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("GMRES breakdown: Arnoldi norm underflow at iteration {iteration}")]
    Breakdown { iteration: usize },
    #[error("solver did not converge within {maxit} iterations")]
    NoConvergence { maxit: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
