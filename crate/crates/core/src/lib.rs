//! Structure-preserving integrators built from the difference discrete
//! variational principle, with numerical checks of the discrete
//! Euler-Lagrange cohomology identities behind their symplectic and
//! multisymplectic conservation laws.
//!
//! Modules:
//! - [`lattice`]: forward differences, Leibniz family, lattice forms, `d`, `δ_L`, `Δ_L`;
//! - [`mechanics`]: discrete Euler-Lagrange, canonical, midpoint and fourth-order steppers;
//! - [`verify`]: Euler-Lagrange 1-forms, their exterior derivatives and the
//!   structure-preservation residuals;
//! - [`field`]: leapfrog, canonical and midpoint box schemes on 2D lattices;
//! - [`models`]: benchmark systems.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod lattice;
pub mod mechanics;
pub mod models;
mod solve;
pub mod verify;

pub use error::{Error, Result};
pub use solve::SolverSettings;
