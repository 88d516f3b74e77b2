//! Numerical toolkit for designing periodic material microstructures with
//! prescribed effective elastic behavior, including negative-Poisson-ratio
//! (auxetic) response.
//!
//! The pipeline:
//!
//! * a B-spline discretization of the unit cell with Bezier element
//!   extraction ([`splines`], [`mesh`]),
//! * a control-point-parameterized level set describing the material layout
//!   ([`levelset`]),
//! * periodic cell equilibrium problems and effective-tensor evaluation by
//!   volume averaging ([`fem`]),
//! * an on-the-fly reduced basis that recycles earlier equilibrium solutions
//!   to skip most full linear solves ([`rom`]),
//! * shape sensitivities of the effective tensor, objective, and volume
//!   ([`sensitivity`]),
//! * a moving-asymptotes update for the constrained design problem ([`mma`]),
//! * and a campaign driver with logging, checkpointing, and field export
//!   ([`driver`], [`io`], [`config`]).
//!
//! All meshes are structured tensor-product grids over the unit cell
//! `[0,1]^d`, `d = 2` or `3`.

pub mod config;
pub mod driver;
pub mod error;
pub mod fem;
pub mod io;
pub mod levelset;
pub mod mesh;
pub mod mma;
pub mod rom;
pub mod sensitivity;
pub mod solver;
pub mod splines;

pub use error::Error;

/// Re-export of the linear-algebra crate whose types appear in this API.
pub use nalgebra;
