//! Solver for fully nonlinear parabolic PDEs driven by a rough signal.
//!
//! The equation `du = F(t, x, Du, D^2 u) dt - Du · V(x) dz_t` is reduced to a
//! classical PDE by a change of variables along the flow of the driving
//! signal: first solve the flow of diffeomorphisms generated by the vector
//! fields `V` against the driver `z`, then conjugate the operator `F` through
//! that flow, solve the resulting time-dependent classical equation with a
//! monotone finite-difference scheme, and finally compose the result with the
//! inverse flow.
//!
//! Module map:
//! - [`roughpath`]: level-2 signature algebra, driver construction, sampling,
//!   and p-variation distances,
//! - [`vecfield`]: vector-field sets with derivatives and Lie brackets,
//! - [`flow`]: the characteristic flow with first/second derivative data,
//! - [`operators`]: operator evaluation, flow conjugation, and the structural
//!   checks (ellipticity, comparison modulus),
//! - [`pdesolve`]: grids, fields, and the explicit monotone scheme,
//! - [`rpde`]: the assembled pipeline plus the approximation studies
//!   (mollified-driver convergence, contraction, twisted approximations).

pub mod error;
pub mod flow;
pub mod operators;
pub mod pdesolve;
pub mod roughpath;
pub mod rpde;
pub mod vecfield;

pub use error::{Error, Result, Stage};

/// Dense dynamically-sized column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense dynamically-sized matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
