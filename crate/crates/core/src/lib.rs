//! Smeared two-component Coulomb plasma in two dimensions.
//!
//! `N` positive and `N` negative unit charges live in the box `[0, √N]²`.
//! Each charge is smeared uniformly on a disc of radius `λ`, which makes the
//! pair interaction finite at short range and lets the Gibbs measure exist for
//! every inverse temperature `β`. The crate samples that measure, breaks each
//! configuration into nearest-neighbor dipoles, and evaluates the electrostatic
//! identities and estimators used to study the dipole phase `β ≥ 2`.
//!
//! Module map:
//!
//! * [`kernel`]: disc potentials, the overlap kernel `g_1`, `κ`, `Z_β` and the
//!   dipole-length law `μ_β`.
//! * [`config`]: signed configurations and the energy functionals on them.
//! * [`nngraph`]: nearest-neighbor digraph, 2-cycles, isolated dipoles,
//!   Gunson–Panta coordinates.
//! * [`combinatorics`]: graph counting and Dirichlet-type integrals.
//! * [`bounds`]: electric field energy on a grid, ball-growth identity, lower
//!   and upper energy bounds with calibrated constants.
//! * [`sampler`]: Metropolis–Hastings chains with dipole-adapted moves.
//! * [`estimators`]: observables, thermodynamic integration, dipole statistics.

pub mod bounds;
pub mod combinatorics;
pub mod config;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
pub mod kernel;
pub mod nngraph;
pub mod par;
pub mod quadrature;
pub mod sampler;
pub mod stats;

pub use config::{EnergyBreakdown, SignedConfiguration, TestFunction};
pub use error::{Error, Result};
pub use geometry::Point;
pub use kernel::{DipoleLaw, SmearedKernel};
pub use nngraph::GraphDecomposition;
