//! Simulation of a temporally and spectrally multiplexed heralded single-photon
//! source built around an MZI-coupled storage ring.
//!
//! - [`spectral`]: transfer-matrix response of the ring, filters and auxiliary ring.
//! - [`dynamics`]: quantum-jump simulation of pair generation and bin outcome tables.
//! - [`inference`]: Bayesian bookkeeping of photon number conditioned on detections.
//! - [`protocol`]: feedback driving protocol, its evaluation and optimisation.
//! - [`cli`]: configuration, caching and the command-line front end.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod inference;
pub mod numeric;
pub mod protocol;
pub mod spectral;

pub use error::{Error, Result};
