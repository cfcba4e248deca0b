//! Spectral stability of Gross-Pitaevskii stationary states via the Krein matrix.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! * [`grid`]: uniform 1D/2D grids, finite-difference operators, fields and their file formats.
//! * [`stationary`]: Newton solves and natural-parameter continuation in the chemical potential.
//! * [`linearize`]: the Hamiltonian linearization `JL`, symmetry kernels, the `D` matrix,
//!   negative indices and a shift-invert Arnoldi oracle for the spectrum of `JL`.
//! * [`pencil`]: the constrained self-adjoint pencil `(R - zS)u = 0` and index bookkeeping.
//! * [`krein`]: the Krein matrix, its eigenvalue traces, residues and complex zeros.
//! * [`driver`]: scenario presets, report classification, sweeps and file outputs.

pub mod config;
pub mod driver;
pub mod error;
pub mod grid;
pub mod krein;
pub mod linalg;
pub mod linearize;
pub mod pencil;
pub mod sparse;
pub mod stationary;

pub use error::{KreinError, Result};
pub use num_complex::Complex64;
