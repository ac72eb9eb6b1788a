use thiserror::Error;

use crate::hilbert::Sector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DickeError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("block dimension {dim} exceeds the configured limit {limit}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("unknown observable `{0}` (expected `Jx` or `q`)")]
    UnknownObservable(String),

    #[error("unknown eigensolver `{0}`")]
    UnknownSolver(String),

    #[error("eigensolver did not converge for a {dim}x{dim} matrix (fingerprint {fingerprint})")]
    NoConvergence { dim: usize, fingerprint: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sector mismatch: expected {expected:?}, got {got:?}")]
    SectorMismatch { expected: Sector, got: Sector },

    #[error("spectra come from different model parameters")]
    FingerprintMismatch,

    #[error("photon cutoff n_max={n_max} too small: {reason}")]
    CutoffTooSmall { n_max: u32, reason: String },

    #[error("cutoff search hit the dimension cap at n_max={n_max} before converging")]
    CutoffNotConverged { n_max: u32 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("storage error: {0}")]
    Storage(String),
}

pub type Result<T, E = DickeError> = std::result::Result<T, E>;
