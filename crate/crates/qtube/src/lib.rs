//! Scattering operators for waves in two-dimensional channels that are
//! asymptotically straight: conformal flattening to a strip, Fourier-sine
//! spectral projection, invariant-imbedding integration of matrix Riccati
//! equations, and composition of sub-channel results.

pub mod building_block;
pub mod cli;
pub mod conformal;
pub mod coupled_mode;
pub mod error;
pub mod geometry;
pub mod imbedding;
pub mod modal_basis;
pub mod ode;
pub mod oracle;
pub mod profile;
pub mod scattering;
pub mod quad;
pub mod scalar;

pub use error::{Result, SolverError};
pub use scalar::Real;

// Concrete f64 shorthands for the common case.
pub type DuctGeometry64 = geometry::DuctGeometry<f64>;
pub type StripMap64 = conformal::StripMap<f64>;
pub type RefractiveProfile64 = profile::RefractiveProfile<f64>;
pub type SplitterConfig64 = coupled_mode::SplitterConfig<f64>;
pub type SolveOptions64 = imbedding::SolveOptions<f64>;
pub type ScatteringSet64 = scattering::ScatteringSet<f64>;
pub type CascadePlan64 = building_block::CascadePlan<f64>;
pub type OracleResult64 = oracle::OracleResult<f64>;
