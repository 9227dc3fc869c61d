//! Numerical laboratory for positive complex metrics and complex affine spheres.
//!
//! The crate solves the complex Tzitzéica (Gauss) equation on periodic model
//! problems and chart windows, assembles the flat `SL(3,ℂ)` connection of a
//! complex affine sphere and integrates its holonomy, analyses spectra of the
//! linearized operators, and checks closed-form examples.

pub mod beltrami;
pub mod cas;
pub mod cmetric;
pub mod error;
pub mod examples;
pub mod exec;
pub mod grid;
pub mod holonomy;
pub mod gauss;
pub mod linalg;
pub mod spectra;
pub mod transport;

pub use error::{CasError, Result};
pub use exec::Exec;
pub use grid::{Backend, ComplexField, GridDomain, C64};
