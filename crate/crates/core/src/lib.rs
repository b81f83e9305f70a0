//! Numerical laboratory for path-convexity uniqueness checks on variational
//! PDE problems.
//!
//! The pipeline: discretize a variational problem on a grid ([`grid`],
//! [`problems`]), connect candidate minimizers by structured interpolation
//! paths ([`paths`]), test convexity of the energy along those paths and the
//! pointwise inequalities that force it ([`inequalities`]), produce the
//! candidate states by gradient flow cross-checked against independent
//! shooting oracles ([`solvers`]), and measure asymptotic decay of computed
//! profiles ([`decay`]). The [`config`] module wires experiment descriptions
//! (JSON) to runs; `report` serializes results deterministically.

pub mod config;
pub mod decay;
pub mod error;
pub mod fields;
pub mod grid;
pub mod inequalities;
pub mod linalg;
pub mod paths;
pub mod problems;
pub mod report;
pub mod solvers;

pub use error::{Error, Result};
