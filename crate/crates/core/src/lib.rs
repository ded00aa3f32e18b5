//! Numerical laboratory for correctors of random divergence-form operators
//! with long-range correlated Gaussian coefficients on periodic lattices.

pub mod coeffmap;
pub mod corrector;
pub mod ensemble;
pub mod error;
pub mod fft;
pub mod functionals;
pub mod gaussfield;
pub mod io;
pub mod lattice;
pub mod report;
pub mod sensitivity;
pub mod solver;
pub mod stats;

pub use error::{LabError, Result};
