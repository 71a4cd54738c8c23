//! Adaptive Crouzeix–Raviart finite elements for distributed optimal control
//! of the Stokes equations with box constraints on the control.
//!
//! The crate is `no_std` (it needs `alloc`). It contains the whole numerical
//! pipeline: newest-vertex-bisection meshes, the nonconforming P1/P0 spaces,
//! assembly, a sparse quasi-definite LDLᵀ saddle-point solver, the discrete
//! optimality system with a variationally discretized control, residual
//! estimators, the adaptive loop, and the empirical verification harness.
//! File formats, timing and the command line live in the companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod afem;
pub mod assembly;
pub mod control;
pub mod dense;
mod error;
pub mod estimate;
pub mod femspace;
pub mod math;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod stokes;
pub mod verify;

pub use error::{Error, Result};

/// A point or vector in the plane.
pub type Point = [f64; 2];
