//! Surface reconstruction from labeled point clouds with small MLPs.
//!
//! Surface points carry label 0, interior points +1 and exterior points -1.
//! A network with plain, residual or highway hidden layers is fitted to the
//! labels by full-batch L-BFGS, and the zero level set of the trained field
//! is extracted with marching cubes.

// `!(x > 0.0)` style checks are used on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod grad;
pub mod isosurface;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod pointset;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use network::{ArchitectureKind, NetworkConfig, Params};
pub use pointset::{Point3, PointSet};
