//! Simulation of measurement-based Kerr gates built from cubic phase gates.

pub mod ancilla;
pub mod decomposition;
pub mod error;
pub mod fock;
pub mod grid;
pub mod harness;
pub mod teleport;

pub use error::{Error, Result};
pub use fock::{C64, CMatrix, CVector};
