use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::table::MAX_CUTOFF;
use super::{
    master_equation_evolve, master_equation_no_jump, run_trajectory, select_cutoff, DensityMatrix, DynamicsParams,
    TwoModeState,
};
use crate::error::{Error, Result};

/// One trajectory average set against its density-matrix value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub setting: f64,
    pub quantity: String,
    pub time: f64,
    pub trajectory_mean: f64,
    pub standard_error: f64,
    pub oracle: f64,
}

impl EquivalenceCheck {
    pub fn deviation_sigmas(&self) -> f64 {
        let diff = (self.trajectory_mean - self.oracle).abs();
        if self.standard_error > 0.0 {
            diff / self.standard_error
        } else if diff < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn passed(&self) -> bool {
        self.deviation_sigmas() <= 3.0
    }
}

// Calibrated parameters for `setting`, raising the cutoff while `f` reports
// truncation. Conditioned oracle states can load the top shell more than the
// calibration ensemble does.
fn with_sufficient_cutoff<T>(
    setting: f64,
    base: &DynamicsParams,
    n0: usize,
    mut f: impl FnMut(&DynamicsParams) -> Result<T>,
) -> Result<T> {
    let mut start = base.cutoff;
    loop {
        let cal = select_cutoff(setting, &base.with_cutoff(start), n0)?;
        match f(&base.with_cutoff(cal.cutoff).with_pump_scale(cal.scale)) {
            Err(Error::Truncation { .. }) if cal.cutoff + 4 <= MAX_CUTOFF => start = cal.cutoff + 4,
            other => return other,
        }
    }
}

// Each sample is a trajectory's conditional (mean, second moment) of the
// observable. The error is that of measuring the observable once per
// trajectory, which bounds the spread of the conditional means and stays
// honest when rare jumps never occur in the sample.
fn mean_and_error(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let second = samples.iter().map(|s| s.1).sum::<f64>() / n;
    (mean, ((second - mean * mean).max(0.0) / (n - 1.0).max(1.0)).sqrt())
}

// Normalised (⟨n_s⟩, ⟨n_s²⟩, ⟨n_i⟩, ⟨n_i²⟩).
fn number_moments(state: &TwoModeState) -> [f64; 4] {
    let total = state.norm_sqr();
    let mut m = [0.0; 4];
    for ns in 0..=state.cutoff() {
        for ni in 0..=state.cutoff() {
            let p = state.amplitude(ns, ni).norm_sqr() / total;
            let (a, b) = (ns as f64, ni as f64);
            m[0] += a * p;
            m[1] += a * a * p;
            m[2] += b * p;
            m[3] += b * b * p;
        }
    }
    m
}

/// Compare `n_traj` quantum-jump trajectories from `|0,0⟩` with the Lindblad
/// oracle at the pump peak and after the pulse: pair probability and both
/// mode populations.
pub fn unraveling_equivalence(setting: f64, base: &DynamicsParams, n_traj: u64, seed: u64) -> Result<Vec<EquivalenceCheck>> {
    with_sufficient_cutoff(setting, base, 0, |params| compare(setting, params, n_traj, seed))
}

fn compare(setting: f64, params: &DynamicsParams, n_traj: u64, seed: u64) -> Result<Vec<EquivalenceCheck>> {
    let start = TwoModeState::fock(0, 0, params.cutoff)?;
    let rho0 = DensityMatrix::fock(0, 0, params.cutoff)?;
    let mut out = Vec::new();
    for time in [params.pump.peak_time(), params.pump.quiet_time()] {
        let rho = master_equation_evolve(&rho0, 0.0, time, params)?;
        let no_jump = master_equation_no_jump(&rho0, 0.0, time, params)?;
        let (oracle_s, oracle_i) = rho.mean_numbers();
        let samples: Vec<[(f64, f64); 3]> = (0..n_traj)
            .into_par_iter()
            .map(|i| {
                let rec = run_trajectory(&start, 0.0, time, time, params, seed.wrapping_add(i))?;
                let s = &rec.final_state;
                let pair = if rec.jumps.is_empty() {
                    1.0 - s.amplitude(0, 0).norm_sqr() / s.norm_sqr()
                } else {
                    1.0
                };
                let m = number_moments(s);
                Ok([(pair, pair), (m[0], m[1]), (m[2], m[3])])
            })
            .collect::<Result<_>>()?;
        let oracles = [1.0 - no_jump.population(0, 0), oracle_s, oracle_i];
        for (k, name) in ["pair_probability", "signal_population", "idler_population"].iter().enumerate() {
            let column: Vec<(f64, f64)> = samples.iter().map(|s| s[k]).collect();
            let (mean, err) = mean_and_error(&column);
            out.push(EquivalenceCheck {
                setting,
                quantity: name.to_string(),
                time,
                trajectory_mean: mean,
                standard_error: err,
                oracle: oracles[k],
            });
        }
    }
    Ok(out)
}

/// Mean idler population left at `tau_bin` after pumping from `|n0, 0⟩`,
/// from the density-matrix oracle.
pub fn residual_idler(setting: f64, n0: usize, tau_bin: f64, base: &DynamicsParams) -> Result<f64> {
    with_sufficient_cutoff(setting, base, n0, |params| {
        let rho = master_equation_evolve(&DensityMatrix::fock(n0, 0, params.cutoff)?, 0.0, tau_bin, params)?;
        Ok(rho.mean_numbers().1)
    })
}
