//! Frequency-domain transfer-matrix model of the MZI-coupled storage ring.
//!
//! The ring is closed by two Mach-Zehnder couplers (idler and signal filter)
//! whose arm imbalance is an integer fraction of the ring length, so each
//! filter opens and closes on a fixed pattern of ring modes. The idler output
//! passes a balanced drop MZI that removes the pump. An optional auxiliary
//! ring of length `L_c/16` splits every sixteenth mode.
//!
//! All quantities are normalised to the internally generated field `s_f`.

mod matrix;
mod modes;

pub use matrix::ComplexMatrix2;
pub use modes::{mode_arithmetic, mode_linewidth, mode_peak, ModeSet};

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Physical ring and filter parameters. Every spectral quantity derives from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    /// Storage ring circumference `L_c` (m).
    pub ring_length: f64,
    /// Idler-filter arm imbalance (m).
    pub idler_path_difference: f64,
    /// Signal-filter arm imbalance (m).
    pub signal_path_difference: f64,
    /// Drop-filter arm imbalance (m).
    pub drop_path_difference: f64,
    /// Through-coupling amplitude of the idler filter couplers.
    pub idler_through: f64,
    /// Through-coupling amplitude of the signal filter couplers.
    pub signal_through: f64,
    /// Through-coupling amplitude of the auxiliary ring coupler.
    pub aux_through: f64,
    pub neff_re: f64,
    pub neff_im: f64,
    pub group_index: f64,
    /// Expansion point of the propagation constant (rad/s).
    pub omega_ref: f64,
    /// Pump mode (rad/s).
    pub omega_pump: f64,
    /// Auxiliary ring circumference (m).
    pub aux_ring_length: f64,
    /// Length of each MZI arm that belongs to the ring (m).
    pub arm_length: f64,
}

impl DeviceGeometry {
    /// Standard filter ratios `ΔL_i = L_c/4`, `ΔL_di = L_c/2`, `ΔL_s = L_c`, with
    /// the pump placed on the ring resonance nearest to `wavelength`.
    pub fn with_standard_ratios(
        ring_length: f64,
        through: f64,
        neff_re: f64,
        neff_im: f64,
        group_index: f64,
        wavelength: f64,
    ) -> Self {
        let nominal = TAU * SPEED_OF_LIGHT / wavelength;
        let order = (neff_re * nominal * ring_length / (TAU * SPEED_OF_LIGHT)).round();
        let omega = TAU * order * SPEED_OF_LIGHT / (neff_re * ring_length);
        Self {
            ring_length,
            idler_path_difference: ring_length / 4.0,
            signal_path_difference: ring_length,
            drop_path_difference: ring_length / 2.0,
            idler_through: through,
            signal_through: through,
            aux_through: 0.9f64.sqrt(),
            neff_re,
            neff_im,
            group_index,
            omega_ref: omega,
            omega_pump: omega,
            aux_ring_length: ring_length / 16.0,
            arm_length: ring_length / 8.0,
        }
    }

    /// The parameters behind the reference spectra: `ν² = 0.95`, `L_c = 100 µm`,
    /// `n_eff = 2.5 + 1e-7 i`, `n_g = 4`, pump near 1550 nm, `ν_a² = 0.9`.
    pub fn reference() -> Self {
        Self::with_standard_ratios(100e-6, 0.95f64.sqrt(), 2.5, 1e-7, 4.0, 1550e-9)
    }

    pub fn lossless(mut self) -> Self {
        self.neff_im = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.ring_length > 0.0) {
            return Err(Error::invalid("ring length must be positive"));
        }
        if !in_unit(self.idler_through) || !in_unit(self.signal_through) {
            return Err(Error::invalid("filter through-coupling must lie in (0, 1)"));
        }
        if !(self.aux_through > 0.0 && self.aux_through <= 1.0) {
            return Err(Error::invalid("auxiliary coupling must lie in (0, 1]"));
        }
        if self.neff_im < 0.0 {
            return Err(Error::invalid("imaginary effective index must be non-negative (no gain)"));
        }
        if !(self.group_index > 0.0 && self.omega_ref > 0.0 && self.omega_pump > 0.0) {
            return Err(Error::invalid("group index and frequencies must be positive"));
        }
        if !self.uses_standard_ratios() {
            log::warn!("device geometry uses non-standard filter path ratios; filter conditions may not hold");
        }
        Ok(())
    }

    /// True when the filter imbalances are `L_c/4`, `L_c`, `L_c/2`.
    pub fn uses_standard_ratios(&self) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        close(self.idler_path_difference, self.ring_length / 4.0)
            && close(self.signal_path_difference, self.ring_length)
            && close(self.drop_path_difference, self.ring_length / 2.0)
    }

    /// Free spectral range `Ω_c = 2πc / (n_g L_c)`.
    pub fn fsr(&self) -> f64 {
        TAU * SPEED_OF_LIGHT / (self.group_index * self.ring_length)
    }

    pub fn round_trip_time(&self) -> f64 {
        self.group_index * self.ring_length / SPEED_OF_LIGHT
    }

    /// Field decay rate from propagation loss alone (rad/s).
    pub fn intrinsic_loss_rate(&self) -> f64 {
        self.neff_im * self.omega_ref / self.group_index
    }

    /// Frequency of ring mode `offset` FSRs from the pump.
    pub fn mode_frequency(&self, offset: i64) -> f64 {
        self.omega_pump + offset as f64 * self.fsr()
    }

    pub fn omega_signal(&self) -> f64 {
        self.mode_frequency(1)
    }

    pub fn omega_idler(&self) -> f64 {
        self.mode_frequency(-1)
    }

    /// Static phase offsets that realise the filter conditions.
    pub fn static_tuning(&self) -> FilterTuning {
        let wrap = |x: f64| x.rem_euclid(TAU);
        let k_i = propagation_constant(self.omega_idler(), self).re;
        let k_s = propagation_constant(self.omega_signal(), self).re;
        let k_p = propagation_constant(self.omega_pump, self).re;
        let supp = propagation_constant(self.mode_frequency(9), self).re;
        FilterTuning {
            idler: wrap(TAU - k_i * self.idler_path_difference),
            signal: wrap(PI - k_s * self.signal_path_difference),
            drop: wrap(PI - k_p * self.drop_path_difference),
            aux: wrap(-supp * self.aux_ring_length),
        }
    }
}

/// Tunable phase offsets: `Δψ_i`, `Δψ_s`, `Δθ_i` and the auxiliary ring offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterTuning {
    pub idler: f64,
    pub signal: f64,
    pub drop: f64,
    pub aux: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Filter {
    Idler,
    Signal,
}

/// Complex wavenumber `k(ω) = ñ_eff ω_0 / c + n_g (ω − ω_0) / c`.
pub fn propagation_constant(omega: f64, g: &DeviceGeometry) -> Complex64 {
    let n = Complex64::new(g.neff_re, g.neff_im);
    n * (g.omega_ref / SPEED_OF_LIGHT) + g.group_index / SPEED_OF_LIGHT * (omega - g.omega_ref)
}

fn filter_params(which: Filter, g: &DeviceGeometry) -> (f64, f64) {
    match which {
        Filter::Idler => (g.idler_path_difference, g.idler_through),
        Filter::Signal => (g.signal_path_difference, g.signal_through),
    }
}

/// Arm phase difference `ψ_n(ω) = k(ω) ΔL_n + Δψ_n` (complex when the index is lossy).
pub fn filter_phase(omega: f64, delta_psi: f64, which: Filter, g: &DeviceGeometry) -> Complex64 {
    let (dl, _) = filter_params(which, g);
    propagation_constant(omega, g) * dl + delta_psi
}

/// Transfer matrix `C Z C` of an MZI with through-coupling `nu`, arm phases
/// `psi_top` (phase-shifter arm) and `psi_bottom` (arm shared with the ring).
pub fn mzi_matrix(nu: f64, psi_top: Complex64, psi_bottom: Complex64) -> ComplexMatrix2 {
    let cross = I * (1.0 - nu * nu).sqrt();
    let coupler = ComplexMatrix2::new([
        [Complex64::from(nu), cross],
        [cross, Complex64::from(nu)],
    ]);
    let arms = ComplexMatrix2::diagonal((I * psi_top).exp(), (I * psi_bottom).exp());
    coupler.mul(&arms).mul(&coupler)
}

/// Filter transfer matrix `Tⁿ`. The in-ring arm is `L_c/8` long.
pub fn mzi_transfer(omega: f64, delta_psi: f64, which: Filter, g: &DeviceGeometry) -> ComplexMatrix2 {
    let (_, nu) = filter_params(which, g);
    let psi_b = propagation_constant(omega, g) * g.arm_length;
    let psi = filter_phase(omega, delta_psi, which, g);
    mzi_matrix(nu, psi_b + psi, psi_b)
}

/// Drop filter `Dⁱ`: balanced couplers, imbalance `ΔL_di`, offset chosen so the
/// pump is routed to the drop port.
pub fn drop_transfer(omega: f64, g: &DeviceGeometry) -> ComplexMatrix2 {
    let theta = propagation_constant(omega, g) * g.drop_path_difference + g.static_tuning().drop;
    mzi_matrix(FRAC_1_SQRT_2, theta, Complex64::new(0.0, 0.0))
}

/// Ring-waveguide tuning parameter `ζ_n = T₂₂ e^{−iψ_nB} = ν² − e^{iψ_n}(1 − ν²)`.
pub fn zeta(omega: f64, delta_psi: f64, which: Filter, g: &DeviceGeometry) -> Complex64 {
    let t = mzi_transfer(omega, delta_psi, which, g);
    let psi_b = propagation_constant(omega, g) * g.arm_length;
    t.get(1, 1) * (-I * psi_b).exp()
}

/// Coupling rate `κ_n = −(c / n_g L_c) ln|ζ_n|` (rad/s).
pub fn coupling_rate(omega: f64, delta_psi: f64, which: Filter, g: &DeviceGeometry) -> Result<f64> {
    let z = zeta(omega, delta_psi, which, g).norm();
    if z == 0.0 {
        return Err(Error::SingularCoupling { omega });
    }
    Ok(-z.ln() / g.round_trip_time())
}

/// Auxiliary ring reflection factor multiplying the round trip.
pub fn aux_factor(omega: f64, nu_a: f64, g: &DeviceGeometry) -> Complex64 {
    let phi_a = propagation_constant(omega, g) * g.aux_ring_length + g.static_tuning().aux;
    let e = (I * phi_a).exp();
    nu_a - (1.0 - nu_a * nu_a) * e / (1.0 - nu_a * e)
}

/// Complex fields at one frequency for an internally generated field `s_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingFields {
    pub circulating: Complex64,
    pub signal_out: Complex64,
    /// Idler filter output before the drop filter (`s_i−'`).
    pub idler_filter_out: Complex64,
    pub idler_out: Complex64,
    pub drop: Complex64,
}

/// Steady-state fields; `aux` is the auxiliary coupling `ν_a` when the ring is attached.
pub fn ring_fields(
    omega: f64,
    delta_psi_i: f64,
    delta_psi_s: f64,
    source: Complex64,
    aux: Option<f64>,
    g: &DeviceGeometry,
) -> Result<RingFields> {
    let k = propagation_constant(omega, g);
    let ti = mzi_transfer(omega, delta_psi_i, Filter::Idler, g);
    let ts = mzi_transfer(omega, delta_psi_s, Filter::Signal, g);
    let arm = (I * k * g.arm_length).exp();
    let zi = ti.get(1, 1) / arm;
    let zs = ts.get(1, 1) / arm;
    let phi_c = k * g.ring_length;
    let arc = (I * k * (g.ring_length - 2.0 * g.arm_length) / 2.0).exp();
    let aux_r = aux.map_or(Complex64::new(1.0, 0.0), |nu| aux_factor(omega, nu, g));
    let denom = 1.0 - (I * phi_c).exp() * zi * zs * aux_r;
    if denom.norm() == 0.0 {
        return Err(Error::SingularResonance { omega });
    }
    let circulating = source / denom;
    let idler_filter_out = ti.get(0, 1) * circulating;
    let signal_in = aux_r * arc * ti.get(1, 1) * circulating;
    let d = drop_transfer(omega, g);
    Ok(RingFields {
        circulating,
        signal_out: ts.get(0, 1) * signal_in,
        idler_filter_out,
        idler_out: d.get(0, 1) * idler_filter_out,
        drop: d.get(0, 0) * idler_filter_out,
    })
}

/// Normalised power spectra on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResponse {
    pub omega: Vec<f64>,
    pub circulating: Vec<f64>,
    pub signal_out: Vec<f64>,
    pub idler_out: Vec<f64>,
    pub drop: Vec<f64>,
}

impl SpectralResponse {
    fn from_fn<F>(grid: &[f64], mut f: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<RingFields>,
    {
        if grid.is_empty() {
            return Err(Error::invalid("frequency grid is empty"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequency grid must be strictly increasing"));
        }
        let mut out = SpectralResponse {
            omega: grid.to_vec(),
            circulating: Vec::with_capacity(grid.len()),
            signal_out: Vec::with_capacity(grid.len()),
            idler_out: Vec::with_capacity(grid.len()),
            drop: Vec::with_capacity(grid.len()),
        };
        for &w in grid {
            let fields = f(w)?;
            out.circulating.push(fields.circulating.norm_sqr());
            out.signal_out.push(fields.signal_out.norm_sqr());
            out.idler_out.push(fields.idler_out.norm_sqr());
            out.drop.push(fields.drop.norm_sqr());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Storage-ring spectra for the given filter offsets.
pub fn circulating_response(
    grid: &[f64],
    delta_psi_i: f64,
    delta_psi_s: f64,
    g: &DeviceGeometry,
) -> Result<SpectralResponse> {
    let one = Complex64::new(1.0, 0.0);
    SpectralResponse::from_fn(grid, |w| ring_fields(w, delta_psi_i, delta_psi_s, one, None, g))
}

/// Spectra with the auxiliary ring attached (static filter tuning).
pub fn aux_circulating_response(grid: &[f64], nu_a: f64, g: &DeviceGeometry) -> Result<SpectralResponse> {
    if !(nu_a > 0.0 && nu_a <= 1.0) {
        return Err(Error::invalid("auxiliary coupling must lie in (0, 1]"));
    }
    let t = g.static_tuning();
    let one = Complex64::new(1.0, 0.0);
    SpectralResponse::from_fn(grid, |w| ring_fields(w, t.idler, t.signal, one, Some(nu_a), g))
}

/// Round-trip phase of the MZI-coupled ring relative to mode order `order`,
/// `Re φ_c − 2π·order + arg(ζ_i ζ_s R)`.
pub fn round_trip_phase_offset(
    omega: f64,
    delta_psi_i: f64,
    delta_psi_s: f64,
    aux: Option<f64>,
    order: f64,
    g: &DeviceGeometry,
) -> f64 {
    // Evaluate the large phase in pieces to keep the subtraction exact.
    let base = g.neff_re * g.omega_ref / SPEED_OF_LIGHT * g.ring_length - TAU * order;
    let lin = g.group_index / SPEED_OF_LIGHT * (omega - g.omega_ref) * g.ring_length;
    let zi = zeta(omega, delta_psi_i, Filter::Idler, g);
    let zs = zeta(omega, delta_psi_s, Filter::Signal, g);
    let r = aux.map_or(Complex64::new(1.0, 0.0), |nu| aux_factor(omega, nu, g));
    base + lin + (zi * zs * r).arg()
}

/// Mode order of ring mode `offset` (its nominal round-trip phase divided by 2π).
pub fn mode_order(offset: i64, g: &DeviceGeometry) -> f64 {
    (propagation_constant(g.mode_frequency(offset), g).re * g.ring_length / TAU).round()
}

/// Resonance of the MZI-coupled ring near mode `offset`, solving the
/// round-trip phase condition by bisection within half an FSR.
pub fn resonance_frequency(
    offset: i64,
    delta_psi_i: f64,
    delta_psi_s: f64,
    aux: Option<f64>,
    g: &DeviceGeometry,
) -> Result<f64> {
    let center = g.mode_frequency(offset);
    let half = 0.5 * g.fsr();
    let order = mode_order(offset, g);
    let f = |d: f64| round_trip_phase_offset(center + d, delta_psi_i, delta_psi_s, aux, order, g);
    // Bisection in the detuning variable keeps the tolerance relative to the FSR.
    let root = bisect(f, -half, half, 1e-13).ok_or(Error::NoRoot {
        lo: center - half,
        hi: center + half,
    })?;
    Ok(center + root)
}

/// Value of `Δψ_s` that puts `ψ_s(ω_s)` at the given phase.
pub fn signal_offset_for_phase(psi_s: f64, g: &DeviceGeometry) -> f64 {
    let k = propagation_constant(g.omega_signal(), g).re;
    (psi_s - k * g.signal_path_difference).rem_euclid(TAU)
}

/// `ψ_s(ω_s)` (real part) for a given `Δψ_s`.
pub fn signal_phase_at_mode(delta_psi_s: f64, g: &DeviceGeometry) -> f64 {
    filter_phase(g.omega_signal(), delta_psi_s, Filter::Signal, g).re
}

/// Signal resonance shift `δ_s = ω_s(ψ_s) − ω_s(ψ_s = π)` (rad/s).
pub fn resonance_shift(delta_psi_s: f64, g: &DeviceGeometry) -> Result<f64> {
    if !(0.0..TAU).contains(&delta_psi_s) {
        return Err(Error::invalid("Δψ_s must lie in [0, 2π)"));
    }
    let t = g.static_tuning();
    let tuned = resonance_frequency(1, t.idler, delta_psi_s, None, g)?;
    let reference = resonance_frequency(1, t.idler, t.signal, None, g)?;
    Ok(tuned - reference)
}
