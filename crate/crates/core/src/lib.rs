//! Lattice laboratory for the elliptic stochastic quantization of the
//! two-dimensional exponential field.
//!
//! The crate builds the full numerical pipeline around the regularized
//! elliptic equation
//!   (-Delta + m^2) phi + alpha K_R(exp(alpha phi - C_eps)) = xi_eps
//! on a periodic grid: white-noise sampling and Wick renormalization
//! ([`noise`]), the monotone Newton-Krylov solver for the shifted equation
//! ([`solver`]), the coupled-noise decay experiment ([`coupling`]), the
//! noise-derivative route with its Feynman-Kac and finite-difference
//! oracles ([`malliavin`]), direct Monte Carlo covariance scans
//! ([`correlations`]), and the continuum Green-function oracle
//! ([`greenfn`]).

pub mod coupling;
pub mod correlations;
pub mod error;
pub mod fit;
pub mod greenfn;
pub mod io;
pub mod lattice;
pub mod malliavin;
pub mod noise;
pub mod pipeline;
pub mod solver;
pub(crate) mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use fit::DecayFit;
pub use lattice::{Field, LatticeConfig, NormSpec, SymbolMode, WeightSpec};
pub use noise::{MollifierSpec, NoiseBundle, RngStream};
pub use solver::{ModelParams, SolveReport, TruncationKR};
