//! Multi-soliton dynamics for perturbed one-dimensional semilinear wave
//! equations in similarity variables.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod modulation;
pub mod pde;
pub mod quadrature;
pub mod reduced;
pub mod shooting;
pub mod solitons;

pub use error::{Error, Result};
pub use grid::{make_grid, Field, Grid, State};
