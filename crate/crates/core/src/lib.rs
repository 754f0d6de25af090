//! Simulation and verification laboratory for the continuous solid-on-solid
//! interface model.
//!
//! The library samples the coupled height/log-conductance Gibbs measure on
//! finite boxes exactly, solves the associated degenerate random-conductance
//! elliptic problems, computes the coarse-grained variational energies that
//! define the effective diffusion matrix, and cross-checks the Gaussian-limit
//! prediction for linear functionals of the height gradient along three
//! independent routes.
//!
//! Modules follow the pipeline order:
//!
//! - [`lattice`]: finite boxes, triadic cubes, adapted simplexes, edges.
//! - [`field`]: height and log-conductance fields, discrete calculus,
//!   snapshot I/O.
//! - [`rng`]: counter-based random number streams.
//! - [`sampler`]: exact conditional samplers and the alternating chain.
//! - [`percolation`]: bad-conductance clusters, good cubes, tail statistics.
//! - [`elliptic`]: conductance Laplacians, direct and iterative solves,
//!   discrete H⁻¹ norms.
//! - [`coarsegrain`]: Dirichlet/Neumann energies, effective matrices,
//!   structural inequalities.
//! - [`clt`]: three-route variance comparison and moment structure.
//! - [`oracle`]: independent brute-force reference implementations for tests.
//! - [`stats`]: means, jackknife error bars, autocorrelation.
//! - [`exec`]: sequential/parallel execution helpers (rayon behind the
//!   `parallel` feature).

pub mod clt;
pub mod coarsegrain;
pub mod elliptic;
pub mod exec;
pub mod field;
pub mod lattice;
pub mod oracle;
pub mod percolation;
pub mod rng;
pub mod sampler;
pub mod stats;

mod error;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
