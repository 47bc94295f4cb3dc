//! Bending-torsion rod homogenization toolkit.
//!
//! The crate computes effective rod stiffness from a triangulated 2D
//! cross-section and a heterogeneous elastic material law, solves the
//! resulting one-dimensional model over SO(3)-valued frame curves, and
//! probes the thin-body limit numerically with explicit recovery
//! deformations on tensor-product 3D grids.
//!
//! Module map:
//! - [`cross_section`]: triangle meshes, primitive generators, axis
//!   normalization and geometric moments.
//! - [`fem2d`]: P1 finite elements on the section, a deflated conjugate
//!   gradient solver, the gradient-space projection and the torsion
//!   constant.
//! - [`material`]: quadratic and finite-strain material laws with the
//!   admissibility checks.
//! - [`effective_stiffness`]: cross-section corrector problems, the 4x4
//!   effective matrix, its Schur reduction, and finite-thickness 3D
//!   relaxation energies.
//! - [`rod_model`]: frame curves, strain extraction, the frame ODE, the
//!   1D energy and its minimization.
//! - [`probe3d`]: displacement decomposition on thin grids, recovery
//!   sequences and scaled 3D energies.

pub mod cross_section;
pub mod effective_stiffness;
pub mod fem2d;
pub mod grid3d;
pub mod material;
pub mod probe3d;
pub mod rod_model;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mesh format error at line {line}: {message}")]
    MeshFormat { line: usize, message: String },
    #[error("invalid mesh: {0}")]
    MeshInvalid(String),
    #[error("inconsistent right-hand side: {0}")]
    Inconsistent(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("unsupported material: {0}")]
    UnsupportedMaterial(String),
    #[error("problem size {unknowns} exceeds limit {limit}")]
    SizeLimit { unknowns: usize, limit: usize },
    #[error("rotation increment angle {angle} too close to pi for a principal logarithm")]
    AmbiguousRotation { angle: f64 },
    #[error("matrix is not skew-symmetric (defect {0:.3e})")]
    NotSkew(f64),
    #[error("descent stalled after {iterations} iterations at energy {energy}")]
    DescentCap {
        iterations: usize,
        energy: f64,
        best: Box<rod_model::FrameCurve>,
    },
    #[error("material config error at line {line}: {message}")]
    MaterialFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
