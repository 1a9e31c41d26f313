//! Propagation of small quantum systems driven by classical stationary Gaussian
//! noise.
//!
//! The noise is decomposed into Karhunen-Loeve modes ([`kle`]), the density
//! matrix is expanded in Hermite polynomials of the mode amplitudes, and the
//! resulting Galerkin hierarchy is integrated deterministically ([`hierarchy`]).
//! A trajectory-averaging Monte Carlo solver ([`montecarlo`]) provides the
//! reference. [`config`] and [`runner`] drive complete runs from INI files.

pub mod config;
pub mod error;
pub mod hierarchy;
pub mod kernel;
pub mod kle;
pub mod model;
pub mod montecarlo;
pub mod operator;
pub mod output;
pub mod runner;

pub use error::{Error, Result};
pub use kernel::{CorrelationKernel, KernelTable};
pub use model::{rotating_frame_potential, StochasticModel};
pub use operator::{commutator_action, expectation, static_propagator, DensityMatrix, Operator, C64};
