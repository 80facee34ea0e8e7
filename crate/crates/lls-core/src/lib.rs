//! Local iterative block-diagonalization of finite lattice Hamiltonians.
//!
//! The library builds nearest-neighbor quantum lattice Hamiltonians
//! K = Σ_i H_i + t Σ V_{bond} from truncated on-site models (gap normalized
//! to 1), then block-diagonalizes them one rectangle at a time: at each step
//! it forms the local Hamiltonian G and its vacuum energy E, solves the
//! recursive series for an anti-Hermitian generator S, conjugates, and
//! propagates the resulting effective potentials to larger rectangles.
//! An exact-diagonalization oracle and a suite of operator-inequality
//! checks verify unitary equivalence, per-step spectral gaps ≥ 1/2, and
//! weighted-norm decay at desk scale.
//!
//! Module map:
//! - [`lattice`]: rectangles, step ordering, minimal rectangles, growth sets;
//! - [`operator`]: tensor-product operator algebra, projectors, weighted norms;
//! - [`model`]: concrete on-site models (quartic oscillator) and initial data;
//! - [`algorithm`]: per-step G/E, the generator series, the table update loop;
//! - [`trees`]: brute-force re-expansion of potentials into branch operators;
//! - [`verify`]: oracles and the inequality/acceptance suite.

pub mod algorithm;
pub mod error;
pub mod lattice;
pub mod model;
pub mod operator;
pub mod trees;
pub mod verify;

pub use error::{Error, Result};
