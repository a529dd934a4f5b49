//! Two-mode pair-generation dynamics within one time bin.
//!
//! The pair term `X(t)(a_i† a_s† + a_i a_s)` conserves `d = n_s − n_i`, so a
//! Fock-diagonal initial state only ever occupies one `d`-sector per
//! trajectory. Each sector is a tridiagonal chain, which keeps trajectories
//! and the density-matrix oracle cheap even at large cutoffs.

mod chain;
mod master;
mod pump;
mod release;
mod state;
mod table;
mod trajectory;
mod verify;

pub use master::{master_equation_evolve, master_equation_no_jump, DensityMatrix};
pub use pump::{pump_energy, PumpPulse};
pub use release::{release_probabilities, ReleaseCurve, ReleaseLimits, ReleaseProfile};
pub use state::TwoModeState;
pub use table::{
    calibrate_pump, estimate_bin_table, pair_probability, select_cutoff, BinOutcomeTable, Calibration,
    TableRequest, TableSet,
};
pub use trajectory::{run_trajectory, Channel, TrajectoryRecord};
pub use verify::{residual_idler, unraveling_equivalence, EquivalenceCheck};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates and pump settings of one pumped bin. Times are relative to the bin start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub detuning_idler: f64,
    pub detuning_signal: f64,
    pub kappa_idler: f64,
    pub kappa_pump: f64,
    /// Signal coupling during the bin; zero while the signal filter is closed.
    pub kappa_signal: f64,
    pub kappa_loss: f64,
    pub pump: PumpPulse,
    /// Maximum photon number per mode.
    pub cutoff: usize,
}

impl DynamicsParams {
    /// Rates from quality factors `Q = ω / 2κ`, detunings `Δ_s = −Δ_i = detuning·κ_p`.
    pub fn from_quality(omega: f64, q_loss: f64, q_idler: f64, q_pump: f64, detuning: f64, pump_width: f64) -> Self {
        let kappa_pump = omega / (2.0 * q_pump);
        Self {
            detuning_idler: -detuning * kappa_pump,
            detuning_signal: detuning * kappa_pump,
            kappa_idler: omega / (2.0 * q_idler),
            kappa_pump,
            kappa_signal: 0.0,
            kappa_loss: omega / (2.0 * q_loss),
            pump: PumpPulse::placed(0.0, pump_width, kappa_pump),
            cutoff: 6,
        }
    }

    /// Parameters of the reference device: `Q_L = 2e8`, `Q_i = Q_p = 6667`, 1550 nm.
    pub fn reference() -> Self {
        let omega = std::f64::consts::TAU * crate::spectral::SPEED_OF_LIGHT / 1550e-9;
        Self::from_quality(omega, 2e8, 6667.0, 6667.0, 20.0, 1e-12)
    }

    pub fn with_pump_scale(&self, x0: f64) -> Self {
        let mut p = self.clone();
        p.pump.scale = x0;
        p
    }

    pub fn with_cutoff(&self, cutoff: usize) -> Self {
        let mut p = self.clone();
        p.cutoff = cutoff;
        p
    }

    /// `1/(2κ_i)`, the idler photon lifetime.
    pub fn idler_lifetime(&self) -> f64 {
        1.0 / (2.0 * self.kappa_idler)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.kappa_idler, self.kappa_pump, self.kappa_signal, self.kappa_loss, self.pump.scale];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("rates and pump scale must be finite and non-negative"));
        }
        if !(self.detuning_idler.is_finite() && self.detuning_signal.is_finite()) {
            return Err(Error::invalid("detunings must be finite"));
        }
        if self.cutoff < 4 {
            return Err(Error::invalid("Fock cutoff must be at least 4"));
        }
        if !(self.pump.width > 0.0) {
            return Err(Error::invalid("pump width must be positive"));
        }
        Ok(())
    }

    /// Fixed integration step `1/(50·max(κ_i, κ_p, X_peak, |Δ_i + Δ_s|))`.
    pub(crate) fn step(&self) -> f64 {
        let fastest = self
            .kappa_idler
            .max(self.kappa_pump)
            .max(self.kappa_signal)
            .max(self.pump.scale)
            .max((self.detuning_idler + self.detuning_signal).abs());
        if fastest > 0.0 {
            1.0 / (50.0 * fastest)
        } else {
            f64::INFINITY
        }
    }
}
