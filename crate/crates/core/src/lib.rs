//! Pseudo-spectral solvers for a scaled Navier–Stokes–Poisson system, its
//! incompressible limit and the fast oscillation correctors.

pub mod dynamics;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod harness;
pub mod integrate;
pub mod oscillation;
pub mod random;
pub mod snapshot;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{ScalarField, TensorField, VectorField};
pub use grid::Grid;
