use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::chain::Sector;
use crate::error::{Error, Result};

/// Truncated two-mode state, amplitudes indexed by `n_s·(N+1) + n_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeState {
    cutoff: usize,
    amplitudes: Vec<Complex64>,
}

impl TwoModeState {
    pub fn fock(ns: usize, ni: usize, cutoff: usize) -> Result<Self> {
        if ns > cutoff || ni > cutoff {
            return Err(Error::invalid(format!("Fock state |{ns},{ni}⟩ exceeds cutoff {cutoff}")));
        }
        let mut s = Self::zeros(cutoff);
        s.amplitudes[ns * (cutoff + 1) + ni] = Complex64::new(1.0, 0.0);
        Ok(s)
    }

    fn zeros(cutoff: usize) -> Self {
        Self {
            cutoff,
            amplitudes: vec![Complex64::new(0.0, 0.0); (cutoff + 1) * (cutoff + 1)],
        }
    }

    pub(crate) fn from_sector(sector: Sector, amps: &[Complex64], cutoff: usize) -> Self {
        let mut s = Self::zeros(cutoff);
        for (j, a) in amps.iter().enumerate() {
            let (ns, ni) = sector.numbers(j);
            s.amplitudes[ns * (cutoff + 1) + ni] = *a;
        }
        s
    }

    /// The sector and chain amplitudes, if the state lies in a single `n_s − n_i` sector.
    pub(crate) fn to_sector(&self) -> Option<(Sector, Vec<Complex64>)> {
        let n = self.cutoff;
        let mut found: Option<i64> = None;
        for ns in 0..=n {
            for ni in 0..=n {
                if self.amplitude(ns, ni).norm_sqr() > 0.0 {
                    let d = ns as i64 - ni as i64;
                    if found.is_some_and(|f| f != d) {
                        return None;
                    }
                    found = Some(d);
                }
            }
        }
        let sector = Sector::new(found?, n);
        let amps = (0..sector.len)
            .map(|j| {
                let (ns, ni) = sector.numbers(j);
                self.amplitude(ns, ni)
            })
            .collect();
        Some((sector, amps))
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn amplitude(&self, ns: usize, ni: usize) -> Complex64 {
        self.amplitudes[ns * (self.cutoff + 1) + ni]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `P(n_s)` with the idler traced out, normalised.
    pub fn signal_distribution(&self) -> Vec<f64> {
        let total = self.norm_sqr();
        (0..=self.cutoff)
            .map(|ns| (0..=self.cutoff).map(|ni| self.amplitude(ns, ni).norm_sqr()).sum::<f64>() / total)
            .collect()
    }

    pub fn mean_numbers(&self) -> (f64, f64) {
        let total = self.norm_sqr();
        let mut s = 0.0;
        let mut i = 0.0;
        for ns in 0..=self.cutoff {
            for ni in 0..=self.cutoff {
                let p = self.amplitude(ns, ni).norm_sqr();
                s += ns as f64 * p;
                i += ni as f64 * p;
            }
        }
        (s / total, i / total)
    }

    /// Normalised population with either mode at the cutoff.
    pub fn top_shell_population(&self) -> f64 {
        let n = self.cutoff;
        let edge: f64 = (0..=n)
            .map(|k| self.amplitude(n, k).norm_sqr() + if k < n { self.amplitude(k, n).norm_sqr() } else { 0.0 })
            .sum();
        edge / self.norm_sqr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fock_state_round_trips_through_sector() {
        let s = TwoModeState::fock(2, 0, 6).unwrap();
        let (sector, amps) = s.to_sector().unwrap();
        assert_eq!(sector.d, 2);
        assert_eq!(TwoModeState::from_sector(sector, &amps, 6), s);
        assert_eq!(s.signal_distribution()[2], 1.0);
        assert!(TwoModeState::fock(7, 0, 6).is_err());
    }

    #[test]
    fn top_shell_counts_both_edges_once() {
        let mut s = TwoModeState::zeros(4);
        s.amplitudes[4 * 5 + 4] = Complex64::new(0.5, 0.0);
        s.amplitudes[0] = Complex64::new(0.5, 0.0);
        assert!((s.top_shell_population() - 0.5).abs() < 1e-15);
    }
}
