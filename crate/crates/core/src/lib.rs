//! Event-driven simulation of a particle in a periodic potential under
//! position dependent Poisson momentum kicks, with the statistics needed to
//! check its diffusive limit.

pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod incursions;
pub mod model;
pub mod periodic;
pub mod quadrature;
pub mod records;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    averaged_kick, sigma, validate, AveragedKick, DerivedConstants, JumpFamily, KickField,
    KickSpec, ModelConfig, ModelSpec, Potential, PotentialSpec, TorusRate, ValidationReport,
};
pub use periodic::PeriodicFn;
