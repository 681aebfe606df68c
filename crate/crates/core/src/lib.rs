//! Probabilistic Bézier curves (N-Curves) and the Gaussian processes they induce.
//!
//! Layers, bottom-up:
//! - [`gaussian`]: dense Gaussian algebra with jittered factorization.
//! - [`bezier`]: Bernstein basis, time grids, N-Curves and their linear construction.
//! - [`ngp`]: kernel strategies and Gram assembly for the induced process.
//! - [`mixture`]: mixtures of N-GPs, conditioning with posterior weights.
//! - [`fit`]: a direct maximum-likelihood prior generator over trajectory sets.
//! - [`predict`]: refinement/update use-cases, metrics and the benchmark.
//! - [`cli`]: the `ncgp` command line.

pub mod bezier;
pub mod cli;
pub mod error;
pub mod fit;
pub mod gaussian;
pub mod mixture;
pub mod ngp;
pub mod predict;

pub use error::{Error, Result};
