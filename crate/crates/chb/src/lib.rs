//! Nonlocal Cahn-Hilliard-Brinkman solver with adjoint-based optimal control.

pub mod app;
pub mod brinkman;
pub mod chbf;
pub mod config;
pub mod control;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod linearize;
pub mod ops;
pub mod potential;
pub mod solver;
pub mod sparse;
pub mod trajectory;
pub mod validate;

pub use error::{ChbError, Result};
pub use grid::{Grid2D, ScalarField, VectorField};
