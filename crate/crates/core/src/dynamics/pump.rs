use std::f64::consts::{FRAC_PI_2, SQRT_2};

use serde::{Deserialize, Serialize};

use super::DynamicsParams;
use crate::numeric::{bisect, exp_erfc, golden_max};

/// Gaussian pump pulse filtered by the pump cavity, `X(t) = X₀ |F(t)|² / max|F|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    /// Peak pair-generation rate `X₀` (rad/s).
    pub scale: f64,
    /// Gaussian width `τ_p` of the input power (s).
    pub width: f64,
    /// Centre `t_p` of the input pulse (s).
    pub center: f64,
    /// Pump cavity decay rate the pulse was normalised for.
    pub kappa_pump: f64,
    peak_field: f64,
    peak_offset: f64,
}

/// Cavity field driven by a unit Gaussian, `∫ e^{−κ(s−u)} e^{−u²/2τ²} du` up to `s`.
fn filtered_field(s: f64, width: f64, kappa: f64) -> f64 {
    let e = -kappa * s + 0.5 * kappa * kappa * width * width;
    let y = (kappa * width * width - s) / (SQRT_2 * width);
    width * FRAC_PI_2.sqrt() * exp_erfc(e, y)
}

impl PumpPulse {
    /// Pulse whose energy at `t0` is a thousandth of its peak.
    pub fn placed(t0: f64, width: f64, kappa_pump: f64) -> Self {
        let span = 10.0 * width + 10.0 / kappa_pump.max(1e-300);
        let (peak_offset, peak_field) = golden_max(
            |s| filtered_field(s, width, kappa_pump),
            -10.0 * width,
            span,
            1e-9 * width,
        );
        let target = 1e-3f64.sqrt() * peak_field;
        let lead = bisect(
            |s| filtered_field(s, width, kappa_pump) - target,
            -60.0 * width,
            peak_offset,
            1e-15,
        )
        .expect("filtered pulse rises through 1e-3 of its peak");
        Self {
            scale: 0.0,
            width,
            center: t0 - lead,
            kappa_pump,
            peak_field,
            peak_offset,
        }
    }

    /// `X(t)/X₀`.
    pub fn shape(&self, t: f64) -> f64 {
        let f = filtered_field(t - self.center, self.width, self.kappa_pump) / self.peak_field;
        f * f
    }

    pub fn energy(&self, t: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.shape(t)
    }

    pub fn peak_time(&self) -> f64 {
        self.center + self.peak_offset
    }

    /// Time after the peak beyond which `X(t) < 1e-12 X₀`.
    pub fn quiet_time(&self) -> f64 {
        let t_peak = self.peak_time();
        let mut reach = 10.0 * self.width + 1.0 / self.kappa_pump;
        while self.shape(t_peak + reach) > 1e-12 {
            reach *= 2.0;
        }
        bisect(|d| self.shape(t_peak + d) - 1e-12, 0.0, reach, 1e-12).map_or(t_peak + reach, |d| t_peak + d)
    }
}

/// Pair-generation rate `X(t)` for the bin described by `params`.
pub fn pump_energy(t: f64, params: &DynamicsParams) -> f64 {
    params.pump.energy(t)
}
