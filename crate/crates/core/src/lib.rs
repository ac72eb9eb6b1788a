//! Excited-state phase diagram of the Dicke model: exact diagonalization in
//! parity sectors, doublet-gap maps and critical-line scaling, the
//! coherent-state mean-field surface, and post-quench dynamics of
//! parity-odd observables.

pub mod contour;
pub mod dynamics;
pub mod eigensolver;
pub mod error;
pub mod hilbert;
pub mod meanfield;
pub mod phase_diagram;

pub use error::{DickeError, Result};
