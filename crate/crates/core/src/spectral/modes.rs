use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{propagation_constant, resonance_frequency, ring_fields, zeta, DeviceGeometry, Filter};
use crate::error::Result;
use crate::numeric::{bisect, golden_max};

/// Ring-mode offsets (in FSRs from the pump) tied to one usable pair index `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    pub p: u32,
    pub signal: i64,
    pub idler: i64,
    pub suppressed: i64,
    pub convertible: i64,
}

impl ModeSet {
    pub fn omegas(&self, g: &DeviceGeometry) -> [f64; 4] {
        [self.signal, self.idler, self.suppressed, self.convertible].map(|m| g.mode_frequency(m))
    }
}

pub fn mode_arithmetic(p: u32) -> ModeSet {
    let p = i64::from(p);
    ModeSet {
        p: p as u32,
        signal: 1 + 4 * p,
        idler: -(1 + 4 * p),
        suppressed: 9 + 16 * p,
        convertible: 5 + 8 * p,
    }
}

fn circulating_power(omega: f64, dpi: f64, dps: f64, aux: Option<f64>, g: &DeviceGeometry) -> f64 {
    ring_fields(omega, dpi, dps, Complex64::new(1.0, 0.0), aux, g)
        .map(|f| f.circulating.norm_sqr())
        .unwrap_or(f64::INFINITY)
}

/// Rough field decay rate of the mode at `omega` from its round-trip loss.
fn decay_estimate(omega: f64, dpi: f64, dps: f64, aux: Option<f64>, g: &DeviceGeometry) -> f64 {
    let k = propagation_constant(omega, g);
    let mut gain = (-k.im * g.ring_length).exp()
        * zeta(omega, dpi, Filter::Idler, g).norm()
        * zeta(omega, dps, Filter::Signal, g).norm();
    if let Some(nu) = aux {
        gain *= super::aux_factor(omega, nu, g).norm();
    }
    (-gain.ln()).max(1e-14) / g.round_trip_time()
}

/// Peak of the circulating power of mode `offset`: `(ω_peak, |s_ci+/s_f|²)`.
pub fn mode_peak(
    offset: i64,
    delta_psi_i: f64,
    delta_psi_s: f64,
    aux: Option<f64>,
    g: &DeviceGeometry,
) -> Result<(f64, f64)> {
    let center = resonance_frequency(offset, delta_psi_i, delta_psi_s, aux, g)?;
    let gamma = decay_estimate(center, delta_psi_i, delta_psi_s, aux, g);
    let half = (10.0 * gamma).min(0.25 * g.fsr());
    let (d, p) = golden_max(
        |d| circulating_power(center + d, delta_psi_i, delta_psi_s, aux, g),
        -half,
        half,
        1e-6 * half,
    );
    Ok((center + d, p))
}

/// Full width at half maximum of the circulating power of mode `offset` (rad/s).
pub fn mode_linewidth(offset: i64, delta_psi_i: f64, delta_psi_s: f64, g: &DeviceGeometry) -> Result<f64> {
    let (peak, pmax) = mode_peak(offset, delta_psi_i, delta_psi_s, None, g)?;
    let gamma = decay_estimate(peak, delta_psi_i, delta_psi_s, None, g);
    let f = |d: f64| circulating_power(peak + d, delta_psi_i, delta_psi_s, None, g) - 0.5 * pmax;
    let side = |sign: f64| -> Result<f64> {
        let mut reach = gamma;
        while f(sign * reach) > 0.0 {
            reach *= 2.0;
            if reach > 0.5 * g.fsr() {
                return Err(crate::error::Error::NoRoot { lo: peak, hi: peak + sign * reach });
            }
        }
        let root = bisect(|d| f(sign * d), 0.0, reach, 1e-12).ok_or(crate::error::Error::NoRoot {
            lo: peak,
            hi: peak + sign * reach,
        })?;
        Ok(root)
    };
    Ok(side(1.0)? + side(-1.0)?)
}
