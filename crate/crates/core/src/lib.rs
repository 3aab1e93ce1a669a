//! Diffusion on irregular meshes: graph operators, classical solvers, and
//! physics-informed graph networks trained against them.
//!
//! The crate is organized around [`graph::GraphSample`], a self-contained
//! problem instance (geometry, connectivity, boundary flags, initial field).
//! Samples come from [`meshgen`] (a healing-front simulation on an ellipsoid
//! shell) or [`meshio`] (OBJ/PLY ingestion); [`cn`] integrates the diffusion
//! equation on them, [`model`] and [`training`] fit neural surrogates with
//! an operator-consistency penalty, and [`eval`] compares everything.

pub mod autodiff;
pub mod cn;
pub mod dense;
pub mod error;
pub mod eval;
pub mod fd;
pub mod graph;
pub mod io;
pub mod meshgen;
pub mod meshio;
pub mod model;
pub mod plot;
pub mod sparse;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{CnVariant, GraphSample, Metadata};
pub use sparse::SparseMatrix;
