//! Gate generation for an open two-qubit system driven by a coherent field
//! `u(t)` and by incoherent environment controls `n₁(t), n₂(t)` that set
//! time-dependent decoherence rates.
//!
//! The crate works entirely in a realified picture: Hermitian 4×4 matrices are
//! 16-vectors in a fixed orthogonal Hermitian basis, and superoperators
//! (the GKSL generator, unitary gate channels, evolution maps) are real
//! 16×16 matrices. On top of that it provides
//!
//! * [`qmodel`]: the basis, realification, generator matrices for the three
//!   model Hamiltonians, and C-NOT / C-PHASE targets;
//! * [`propagator`]: piecewise-constant evolution via matrix exponentials,
//!   with an adaptive Runge–Kutta oracle;
//! * [`objectives`]: the squared-distance and three-state (GRK) infidelities;
//! * [`gradients`]: exact gradients via the `dexp` integral, plus
//!   finite-difference gradient and Hessian checks;
//! * [`optimize`]: inGRAPE gradient descent and generalized simulated annealing;
//! * [`landscape`]: multistart statistics, histograms, clustering, ε-sweeps.

pub mod error;
pub mod gradients;
pub mod landscape;
pub mod objectives;
pub mod optimize;
pub mod propagator;
pub mod qmodel;

pub use error::{Error, Result};

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;

/// Hilbert-space dimension of two qubits.
pub const DIM: usize = 4;
/// Number of real coordinates of a Hermitian `DIM × DIM` matrix.
pub const REAL_DIM: usize = DIM * DIM;

/// Real 16×16 matrix (realified superoperator).
pub type Mat16 = SMatrix<f64, REAL_DIM, REAL_DIM>;
/// Real 16-vector (realified Hermitian matrix).
pub type Vec16 = SVector<f64, REAL_DIM>;
/// Complex 4×4 matrix.
pub type CMat4 = SMatrix<Complex64, DIM, DIM>;
/// Complex 2×2 matrix.
pub type CMat2 = SMatrix<Complex64, 2, 2>;
