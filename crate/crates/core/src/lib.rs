//! Finite element / collocation solver for the cubic-type nonlinear
//! Schrödinger equation `i u_t - u_xx - f(|u|²) u = 0` in one space
//! dimension, using a scalar auxiliary variable to carry the nonlinear
//! energy.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fem1d;
pub mod linsolve;
pub mod sav_model;
pub mod slab_stepper;
pub mod time_collocation;

pub use error::{Result, SolverError};
