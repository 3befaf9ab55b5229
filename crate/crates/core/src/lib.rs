//! Linearized quadratic Wasserstein distances on the unit square.
//!
//! The weighted negative Sobolev norm of `f - g` relative to a reference density `f`
//! is computed by conjugate gradients on a cosine-basis discretization of the
//! Witten Laplacian `-Delta + V`, where `V` comes from a heat-smoothed square root of `f`.
//! [`embedding`] turns the same operator into a Hilbert-space embedding of densities,
//! and [`experiments`] holds the reproducible numerical studies.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod oracles;
pub mod potential;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{DensityGrid, WorkField};
pub use spectral::{CosineBasis, EigenvalueTable, SpectralCoeffs};
