use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, gauss_legendre8, golden_max, scaled_erf_diff};

/// Signal coupling during a release bin: a Gaussian control filtered by the
/// phase-shifter response, `κ_s(t) = A ∫_{t0}^{t} e^{−κ_ψs(t−t')} e^{−(t'−t_r)²/τ_r²} dt'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseProfile {
    /// `A` (rad/s²).
    pub amplitude: f64,
    /// `κ_ψs` (1/s).
    pub response_rate: f64,
    /// `τ_r` (s).
    pub width: f64,
    /// `t_r` (s).
    pub center: f64,
    /// Start of the bin (s).
    pub start: f64,
    /// Cap on `κ_s`, at most `κ_i`.
    pub kappa_max: f64,
}

/// `p_c`, `p_s`, `p_L` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseCurve {
    pub time: Vec<f64>,
    pub stay: Vec<f64>,
    pub emitted: Vec<f64>,
    pub lost: Vec<f64>,
}

impl ReleaseProfile {
    /// Profile whose control Gaussian at `start` is a thousandth of its peak.
    pub fn placed(start: f64, amplitude: f64, width: f64, response_rate: f64, kappa_max: f64) -> Self {
        Self {
            amplitude,
            response_rate,
            width,
            center: start + width * 1000f64.ln().sqrt(),
            start,
            kappa_max,
        }
    }

    /// Unclipped `κ_s(t)`.
    pub fn raw_coupling(&self, t: f64) -> f64 {
        if t <= self.start || self.amplitude == 0.0 {
            return 0.0;
        }
        let (k, w) = (self.response_rate, self.width);
        let shift = 0.5 * k * w * w;
        let e = -k * (t - self.center) + 0.25 * k * k * w * w;
        let y0 = (self.start - self.center - shift) / w;
        let y1 = (t - self.center - shift) / w;
        self.amplitude * 0.5 * w * PI.sqrt() * scaled_erf_diff(e, y0, y1)
    }

    pub fn coupling(&self, t: f64) -> f64 {
        self.raw_coupling(t).min(self.kappa_max)
    }

    /// Time after which `κ_s` is negligible (below `e^{−40}` of its scale).
    fn active_until(&self) -> f64 {
        self.center + 6.0 * self.width + 40.0 / self.response_rate
    }

    /// Peak of the unclipped coupling.
    pub fn peak(&self) -> f64 {
        let (_, v) = golden_max(|t| self.raw_coupling(t), self.start, self.active_until(), 1e-6 * self.width.min(1.0 / self.response_rate));
        v
    }

    /// `(p_c, p_s)` at time `t` for an initial single photon.
    pub fn fractions(&self, t: f64, kappa_loss: f64) -> (f64, f64) {
        let curve = integrate_curve(self, kappa_loss, &[t]);
        (curve[0].0, curve[0].1)
    }
}

/// Cumulative `(p_c, p_s)` at sorted times, by composite Gauss-Legendre with
/// the exposure `Λ(t) = ∫2(κ_s+κ_L)` recomputed at every node.
fn integrate_curve(profile: &ReleaseProfile, kappa_loss: f64, times: &[f64]) -> Vec<(f64, f64)> {
    let t0 = profile.start;
    let end_active = profile.active_until();
    // Fine panels while the control Gaussian is on, then the scale of the
    // exponential tail.
    let gaussian_until = profile.center + 6.0 * profile.width;
    let fine = 0.25 * profile.width.min(1.0 / profile.response_rate);
    let coarse = 0.25 / profile.response_rate;
    let rate = |t: f64| 2.0 * (profile.coupling(t) + kappa_loss);
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut lambda, mut emitted) = (t0, 0.0f64, 0.0f64);
    for &target in times {
        let target = target.max(t0);
        while t < target {
            if t >= end_active {
                // Only intrinsic loss remains.
                lambda += 2.0 * kappa_loss * (target - t);
                t = target;
                break;
            }
            let panel = if t < gaussian_until { fine } else { coarse.max(fine) };
            let b = (t + panel).min(target).min(end_active.max(t + 1e-300));
            let a = t;
            let lam_a = lambda;
            let mut f = |x: f64| {
                let mut r = rate;
                let lam = lam_a + gauss_legendre8(&mut r, a, x);
                2.0 * profile.coupling(x) * (-lam).exp()
            };
            emitted += gauss_legendre8(&mut f, a, b);
            let mut r = rate;
            lambda += gauss_legendre8(&mut r, a, b);
            t = b;
        }
        out.push(((-lambda).exp(), emitted));
    }
    out
}

/// `(p_c, p_s, p_L)` on a grid for a single photon stored at the bin start.
pub fn release_probabilities(grid: &[f64], profile: &ReleaseProfile, kappa_loss: f64) -> Result<ReleaseCurve> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("time grid must be non-decreasing"));
    }
    if profile.raw_coupling(profile.center).is_finite() && profile.peak() > profile.kappa_max * (1.0 + 1e-12) {
        log::warn!("release coupling exceeds κ_max; clipping");
    }
    let vals = integrate_curve(profile, kappa_loss, grid);
    Ok(ReleaseCurve {
        time: grid.to_vec(),
        stay: vals.iter().map(|v| v.0).collect(),
        emitted: vals.iter().map(|v| v.1).collect(),
        lost: vals.iter().map(|v| 1.0 - v.0 - v.1).collect(),
    })
}

/// Bounds of the control width search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseLimits {
    pub response_rate: f64,
    pub kappa_max: f64,
    pub min_width: f64,
}

impl ReleaseProfile {
    /// Profile on `[start, end]` whose retention `p_c(end)` equals `target`.
    /// Widens the control at peak `κ_max` for strong release, and lowers the
    /// amplitude at the narrowest width for weak release.
    pub fn for_target(target: f64, start: f64, end: f64, kappa_loss: f64, limits: &ReleaseLimits) -> Result<Self> {
        let ceiling = (-2.0 * kappa_loss * (end - start)).exp();
        if !(target > 0.0 && target < ceiling) {
            return Err(Error::invalid(format!(
                "release retention {target} outside (0, {ceiling}) for this bin"
            )));
        }
        let at_peak = |w: f64| {
            let unit = Self::placed(start, 1.0, w, limits.response_rate, f64::INFINITY);
            let a = limits.kappa_max / unit.peak();
            Self::placed(start, a, w, limits.response_rate, limits.kappa_max)
        };
        let retention = |p: &Self| p.fractions(end, kappa_loss).0;
        let narrow = at_peak(limits.min_width);
        if retention(&narrow) <= target {
            let a_max = narrow.amplitude;
            let a = bisect(
                |a| {
                    let mut p = narrow.clone();
                    p.amplitude = a;
                    retention(&p) - target
                },
                0.0,
                a_max,
                1e-12,
            )
            .ok_or_else(|| Error::invalid("release amplitude search failed"))?;
            let mut p = narrow;
            p.amplitude = a;
            return Ok(p);
        }
        let max_width = (end - start) / (1000f64.ln().sqrt() + 3.0);
        if max_width <= limits.min_width || retention(&at_peak(max_width)) > target {
            return Err(Error::invalid(format!(
                "release retention {target} unreachable within a bin of {:e} s",
                end - start
            )));
        }
        let lw = bisect(
            |lw: f64| retention(&at_peak(lw.exp())) - target,
            limits.min_width.ln(),
            max_width.ln(),
            1e-12,
        )
        .ok_or_else(|| Error::invalid("release width search failed"))?;
        Ok(at_peak(lw.exp()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> ReleaseProfile {
        ReleaseProfile::placed(0.0, 3e22, 2e-12, 1.0 / 3e-12, 9.1e10)
    }

    #[test]
    fn closed_form_coupling_matches_quadrature() {
        let p = profile();
        for t in [1e-12, 4e-12, 1e-11, 3e-11] {
            let direct = crate::numeric::integrate(
                |s| (-p.response_rate * (t - s)).exp() * (-((s - p.center) / p.width).powi(2)).exp(),
                0.0,
                t,
                200,
            ) * p.amplitude;
            assert!((direct - p.raw_coupling(t)).abs() < 1e-9 * direct, "t = {t:e}");
        }
    }

    #[test]
    fn placement_starts_from_zero() {
        let p = profile();
        assert_eq!(p.raw_coupling(0.0), 0.0);
        let g0 = (-((p.start - p.center) / p.width).powi(2)).exp();
        assert!((g0 - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_pure_loss() {
        let mut p = profile();
        p.amplitude = 0.0;
        let kl = 3e6;
        let c = release_probabilities(&[0.0, 1e-10, 1e-9], &p, kl).unwrap();
        for (t, s) in c.time.iter().zip(&c.stay) {
            assert!((s - (-2.0 * kl * t).exp()).abs() < 1e-12);
        }
        assert!(c.emitted.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn target_search_hits_requested_retention() {
        let limits = ReleaseLimits {
            response_rate: 1.0 / 3e-12,
            kappa_max: 9.1e10,
            min_width: 0.1e-12,
        };
        for target in [0.05, 0.3, 0.5, 0.9] {
            let p = ReleaseProfile::for_target(target, 0.0, 100e-12, 3e6, &limits).unwrap();
            let (pc, _) = p.fractions(100e-12, 3e6);
            assert!((pc - target).abs() < 1e-8, "target {target}: {pc}");
            assert!(p.peak() <= limits.kappa_max * (1.0 + 1e-9));
        }
    }
}
