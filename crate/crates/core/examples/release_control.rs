//! Shape a release pulse for a target retention and follow the stored,
//! emitted and lost fractions through the bin.

use muxsource::dynamics::{release_probabilities, DynamicsParams, ReleaseLimits, ReleaseProfile};

fn main() -> muxsource::Result<()> {
    let params = DynamicsParams::reference();
    let limits = ReleaseLimits {
        response_rate: 1.0 / 3e-12,
        kappa_max: params.kappa_idler,
        min_width: 1e-13,
    };
    let tau = 120e-12;
    for target in [0.9, 0.5, 0.1] {
        let profile = ReleaseProfile::for_target(target, 0.0, tau, params.kappa_loss, &limits)?;
        let grid: Vec<f64> = (1..=6).map(|k| tau * k as f64 / 6.0).collect();
        let curve = release_probabilities(&grid, &profile, params.kappa_loss)?;
        println!("target p_c = {target}: width {:.3e} s, peak κ_s {:.3e} /s", profile.width, profile.peak());
        for (i, t) in curve.time.iter().enumerate() {
            println!(
                "  t = {t:.2e} s: stay {:.5}, emitted {:.5}, lost {:.2e}",
                curve.stay[i], curve.emitted[i], curve.lost[i]
            );
        }
    }
    Ok(())
}
