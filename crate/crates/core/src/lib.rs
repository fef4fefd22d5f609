//! Simulation and analysis of entanglement-based (BBM92) key distribution
//! over dispersive fiber with nonlocal dispersion compensation.
//!
//! - [`physics`]: link description and timing-budget formulas
//! - [`montecarlo`]: seeded time-tag generation
//! - [`tagio`]: time-tag file format
//! - [`analysis`]: histograms, peak fits, coincidences, key rate
//! - [`model`]: closed-form key-rate model, sweeps and brightness optimization

pub mod analysis;
pub mod model;
pub mod montecarlo;
pub mod physics;
pub mod rng;
pub mod tagio;
