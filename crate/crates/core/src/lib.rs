//! Matrix-free implicit radiation-diffusion mini-app.
//!
//! The computational core is a five-band block stencil for two-species 2-D
//! diffusion solved implicitly with BiCGSTAB, preconditioned by a sparse
//! approximate inverse of the same stencil shape, over a Cartesian tile
//! decomposition with halo exchange and deterministic ganged global
//! reductions. A kernel driver times the underlying BLAS-1-style operations
//! on scalar and vectorized paths, and a topology sweep runs the pulse
//! workload across tile layouts.

pub mod bench;
pub mod cli;
pub mod config;
pub mod grid;
pub mod kernels;
pub mod operator;
pub mod oracle;
pub mod precond;
pub mod pulse;
pub mod solver;
pub mod verify;
