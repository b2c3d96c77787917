//! Finite-element laboratory for the strongly damped wave equation with
//! dynamic boundary conditions.

pub mod cli;
pub mod dense;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod geometry;
pub mod integrator;
pub mod nonlinearity;
pub mod operator;
pub mod sparse;
