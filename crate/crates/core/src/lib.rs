//! Lagrangian flux calculation (LFC) through moving surfaces in 3D flows.
//!
//! The Eulerian flux of a conserved scalar through a moving surface over a
//! time interval equals an integral, at the initial time only, over the
//! *generating cycle* of the surface: the closed (possibly self-intersecting)
//! surface swept out by flowing the moving surface back to the initial time.
//! This crate builds that cycle from spline patches and integrates the scalar
//! over it, and carries the machinery used to check the underlying identities:
//! an Eulerian quadrature oracle, pathline crossing counts, topological degree
//! classification of donating regions, and divergence/transport checks.
//!
//! Module map:
//! - [`ode`]: explicit Runge-Kutta integrators and the flow map.
//! - [`fields`]: velocity fields, scalar fields, moving surfaces, presets.
//! - [`spline`]: tensor-product interpolating splines of order 2, 4, 6.
//! - [`quad`]: Gauss-Legendre rules and the anti-derivative surface cubature.
//! - [`cycle`]: generating-cycle construction and mesh export.
//! - [`degree`]: fluxing indices, topological degree, donating regions.
//! - [`lfc`]: the flux driver, the Eulerian oracle, convergence studies and
//!   identity verification.

pub mod cycle;
pub mod degree;
pub mod error;
pub mod fields;
pub mod lfc;
pub mod ode;
pub mod quad;
pub mod spline;
mod sum;

pub use error::{Error, Result};

/// A position (or vector) in R³.
pub type Point = nalgebra::Vector3<f64>;

pub use sum::pairwise_sum;
