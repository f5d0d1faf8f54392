//! Epidemic modelling toolkit: deterministic compartment models, the
//! closed-form linearized SEIR solution, a spectral reaction-diffusion SIR
//! solver with linear stability analysis, Gillespie and Langevin
//! stochastic simulation, and sensitivity-equation calibration.

pub mod analytic;
pub mod calibrate;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod ode;
pub mod plot;
pub mod scenario;
pub mod schema;
pub mod spatial;
pub mod stability;
pub mod stochastic;

pub use error::{Error, Result};
