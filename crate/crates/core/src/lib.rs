//! Numerical laboratory for the convexified, time-rescaled Perona-Malik flow
//! and its convergence to the total variation flow.

pub mod error;
pub mod experiment;
pub mod flow;
pub mod gamma;
pub mod grid;
pub mod potential;
pub mod slope;

pub use error::{Error, Result};
pub use flow::{evolve, ExperimentConfig, FlowTrace, GridSpec, InitSpec, Model};
pub use grid::{Field, Shape};
pub use potential::{convex_envelope, ConvexEnvelope, ScalarPotential};
