//! Recovery of a spatially varying diffusion coefficient from noisy state
//! observations.
//!
//! The crate covers the whole pipeline: structured simplicial meshes of the
//! unit interval and unit square, P1 finite-element assembly, elliptic and
//! backward-Euler parabolic forward solvers, Tikhonov-regularized output
//! least-squares objectives with exact discrete-adjoint gradients, a
//! box-projected nonlinear conjugate gradient optimizer, and the experiment
//! layer (noisy data synthesis, error metrics, noise-level sweeps and rate
//! fitting).

pub mod error;
pub mod experiment;
pub mod fem;
pub mod forward;
pub mod inverse;
pub mod linalg;
pub mod mesh;
pub mod verify;

pub use error::{Error, Result};
pub use fem::{FeFunction, P1Space, ScalarField, Space, SpaceTimeField};
pub use forward::{TimeGrid, TimeSeriesFe};
pub use linalg::{CgOptions, SparseMatrix};
pub use mesh::Mesh;
