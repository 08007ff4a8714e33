//! Moment-method null controllability for the linear stabilized
//! Kuramoto–Sivashinsky / KdV–heat system on the periodic interval [0, 2π].
//!
//! The pipeline is: per-mode spectra of the adjoint operator ([`spectrum`]),
//! Fourier-coefficient fields and dual norms ([`fourier_space`]), families
//! biorthogonal to `{e^{-μ t}}` ([`biortho`]) built either from a Gram system
//! solved in arbitrary precision ([`mp`]) or from canonical products and
//! multipliers ([`entire_functions`]), control synthesis ([`moment_control`]),
//! and exact per-mode simulation of the controlled system ([`pde_sim`]).

pub mod biortho;
pub mod cli;
pub mod entire_functions;
pub mod error;
pub mod fourier_space;
pub mod moment_control;
pub mod mp;
pub mod par;
pub mod pde_sim;
pub mod quad;
pub mod spectrum;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
