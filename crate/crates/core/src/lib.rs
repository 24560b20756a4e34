//! Multi-label volumetric reconstruction from posed depth maps with exact ray potentials.
//!
//! The data term charges each viewing ray by the first occupied voxel it meets; a non-convex
//! visibility-consistency constraint ties the per-ray visibility variables to the global label
//! field. The energy is minimized by alternating a linear majorization of that constraint with a
//! diagonally preconditioned primal-dual solver on the resulting convex surrogate.

pub mod camera;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod io;
pub mod mesh;
pub mod oracle;
pub mod ray;
pub mod raypot;
pub mod regularizer;
pub mod simplex;
pub mod solver;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
