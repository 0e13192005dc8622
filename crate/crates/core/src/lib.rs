//! Periodic collinear n-body orbits with simultaneous binary collisions,
//! found by minimizing a discretized action and checked by a regularizing
//! integrator.

pub mod action;
pub mod cli;
pub mod config;
pub mod error;
pub mod gamma;
pub mod integrator;
pub mod lbfgs;
pub mod minimizer;
pub mod model;
pub mod numerics;
pub mod solution;
pub mod verifier;

pub use error::{Error, Result};
pub use model::{PhaseState, Permutation, SystemSpec};
