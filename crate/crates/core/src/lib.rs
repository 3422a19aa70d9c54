//! Simulation and gradient-estimation toolkit for a Wasserstein diffusion on
//! the circle `T = R / 2 pi Z`.
//!
//! The particle system `x_t^g(u)` transports the quantile function `g` of an
//! initial density by a Fourier-mode common noise plus an idiosyncratic
//! Brownian motion. The crate provides the stepping engine, measure
//! functionals with analytic derivatives, an approximate
//! Bismut–Elworthy–Li gradient estimator with its remainder, and a spectral
//! density solver used as an independent cross-check.

pub mod bel;
pub mod config;
pub mod error;
pub mod functional;
pub mod geometry;
pub mod interp;
pub mod montecarlo;
pub mod noise;
pub mod sde;
pub mod spde;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
