//! Boundary-control density tomography for the wave equation on the unit disk.
//!
//! The pipeline: mesh the disk, simulate boundary-driven waves, turn boundary
//! traces into interior inner products, steer waves toward harmonic targets,
//! then recover the density from the resulting mass-matrix moments.

pub mod control;
pub mod error;
pub mod fem;
pub mod forms;
pub mod harmonics;
pub mod mesh;
pub mod reconstruct;
pub mod samples;
pub mod wavesim;

pub use error::{Error, Result};
