//! Simulation toolkit for proxy-space error mitigation on multi-mode
//! bosonic logical qubits.
//!
//! The crate is organized bottom-up:
//!
//! - [`fock`]: truncated multi-mode Fock spaces, ladder and number
//!   operators, occupation-sector projectors.
//! - [`linalg`]: the small dense complex-matrix toolbox behind
//!   everything else (Hermitian eigenvalues, Kronecker products, a
//!   reference matrix exponential, sparse operator application).
//! - [`dynamics`]: Lindblad master-equation integration (fixed-step RK4
//!   and a matrix-free exponential reference), Bose-Hubbard-style chain
//!   Hamiltonians, and quasi-static disorder ensembles.
//! - [`codes`]: two-level logical encodings embedded in Fock space:
//!   dual-rail, one- and two-mode binomial families, and a registry of
//!   named proxy pairs.
//! - [`channel`]: the linear quantum-channel abstraction shared by
//!   tomography and the code utilities.
//! - [`tomography`]: logical Pauli transfer matrices (LPTMs) under
//!   configurable error-detection strategies, for single channels and
//!   for disorder ensembles.
//! - [`decomp`]: scalar noise measures (leakage, mixing, coherent,
//!   non-unital) extracted from an LPTM via an SVD split of its 3x3
//!   rotation block.
//! - [`affine`]: affine maps between proxy-space and code-space LPTMs,
//!   fit by closed-form least squares or a smoothed sum-of-norms cost.
//! - [`mitigation`]: readout mitigation by inverting the proxy LPTM
//!   block, including the full superposition-probe experiment.

pub mod affine;
pub mod channel;
pub mod codes;
pub mod decomp;
pub mod dynamics;
pub mod fock;
pub mod linalg;
pub mod mitigation;
pub mod tomography;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Crate-wide error type. Variants mirror the failure modes of the
/// individual modules so callers can map them onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension {dim} for {modes} modes at cutoff {n_max} exceeds cap {cap}")]
    DimensionCap {
        modes: usize,
        n_max: usize,
        dim: usize,
        cap: usize,
    },
    #[error("mode index {mode} out of range for {modes} modes")]
    ModeIndex { mode: usize, modes: usize },
    #[error("occupation {occ} exceeds cutoff {n_max}")]
    OccupationRange { occ: usize, n_max: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid time step {dt}: must be positive and finite")]
    InvalidTimeStep { dt: f64 },
    #[error("negative loss rate {rate} on mode {mode}")]
    NegativeRate { mode: usize, rate: f64 },
    #[error("not a valid density matrix: {reason}")]
    InvalidState { reason: String },
    #[error("evolution left the physical manifold: {reason}")]
    Unphysical { reason: String },
    #[error("unknown code '{0}'")]
    UnknownCode(String),
    #[error("basis too small for {code}: needs {modes} modes with cutoff >= {n_max}")]
    BasisTooSmall {
        code: String,
        modes: usize,
        n_max: usize,
    },
    #[error("invalid code construction: {0}")]
    BadCode(String),
    #[error("logical coefficients not normalized: |a|^2 + |b|^2 = {norm}")]
    BadCoefficients { norm: f64 },
    #[error("detection strategy incompatible with code: {0}")]
    BadDetection(String),
    #[error("post-selection weight {weight:.3e} below floor {floor:.3e}")]
    PostSelectionUnderflow { weight: f64, floor: f64 },
    #[error("imaginary residue {residue:.3e} in transfer-matrix trace exceeds {limit:.1e}")]
    ImaginaryResidue { residue: f64, limit: f64 },
    #[error("proxy block condition number {cond:.3e} exceeds cap {cap:.3e}")]
    IllConditioned { cond: f64, cap: f64 },
    #[error("affine fit needs at least one training pair")]
    EmptyTrainingSet,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
