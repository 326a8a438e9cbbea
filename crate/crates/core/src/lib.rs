//! Continuous-variable quantum neural networks trained as physics-informed
//! solvers for the one-dimensional Poisson equation.

pub mod cv_sim;
pub mod error;
pub mod experiment;
pub mod jets;
pub mod optim;
pub mod pinn;
pub mod qnn;

pub use error::{Error, Result};
