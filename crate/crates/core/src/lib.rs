//! Numerical minimization of L(u) = ∫∂Ω u dσ − ∫Ω u dA over convex functions
//! with prescribed Monge-Ampère determinant, together with verification tools
//! for the associated Euler-Lagrange system.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linearized;
pub mod ma;
pub mod minimizer;
pub mod pogorelov;
pub mod quadrature;
pub mod sparse;

pub use error::{Error, Result};
pub use field::GridFunction;
pub use geometry::{BoundaryQuadrature, Domain, Grid, Mesh, Point};
