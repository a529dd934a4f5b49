use std::f64::consts::{PI, TAU};

use muxsource::spectral::*;
use proptest::prelude::*;

fn reference() -> DeviceGeometry {
    DeviceGeometry::reference()
}

#[test]
fn transfer_matrices_are_unitary_without_loss() {
    let g = reference().lossless();
    let t = g.static_tuning();
    let mut worst: f64 = 0.0;
    for j in 0..10_000 {
        let w = g.omega_pump + (-5.0 + 10.0 * j as f64 / 9_999.0) * g.fsr();
        for m in [
            mzi_transfer(w, t.idler, Filter::Idler, &g),
            mzi_transfer(w, t.signal, Filter::Signal, &g),
            drop_transfer(w, &g),
        ] {
            worst = worst.max(m.unitarity_defect());
        }
    }
    assert!(worst < 1e-12, "worst defect {worst:e}");
}

proptest! {
    #[test]
    fn zeta_never_exceeds_unity(frac in -3.0f64..3.0, dpsi in 0.0f64..TAU, loss in 0.0f64..1e-5, nu2 in 0.05f64..0.99) {
        let mut g = reference();
        g.neff_im = loss;
        g.signal_through = nu2.sqrt();
        let w = g.omega_pump + frac * g.fsr();
        let z = zeta(w, dpsi, Filter::Signal, &g).norm();
        prop_assert!(z <= 1.0 + 1e-14);
    }

    #[test]
    fn coupling_rate_is_minimal_at_closed_filter(dpsi in 0.01f64..(TAU - 0.01)) {
        let g = reference();
        let w = g.omega_signal();
        let closed = signal_offset_for_phase(PI, &g);
        let k_closed = coupling_rate(w, closed, Filter::Signal, &g).unwrap();
        let k = coupling_rate(w, dpsi, Filter::Signal, &g).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert!(k >= k_closed - 1e-9 * k_closed.abs());
    }
}

#[test]
fn zeta_has_unit_modulus_only_at_closed_lossless_filter() {
    let g = reference().lossless();
    let w = g.omega_signal();
    let closed = signal_offset_for_phase(PI, &g);
    assert!((zeta(w, closed, Filter::Signal, &g).norm() - 1.0).abs() < 1e-14);
    for d in [-1.0, -0.1, 0.01, 0.5] {
        assert!(zeta(w, closed + d, Filter::Signal, &g).norm() < 1.0);
    }
}

#[test]
fn idler_linewidth_matches_coupling_rate() {
    let g = reference();
    let t = g.static_tuning();
    let wi = g.omega_idler();
    let kappa = coupling_rate(wi, t.idler, Filter::Idler, &g).unwrap()
        + coupling_rate(wi, t.signal, Filter::Signal, &g).unwrap()
        + g.intrinsic_loss_rate();
    let fwhm = mode_linewidth(-1, t.idler, t.signal, &g).unwrap();
    let rel = (fwhm - 2.0 * kappa).abs() / (2.0 * kappa);
    assert!(rel < 0.05, "fwhm {fwhm:e} vs 2κ {:e}", 2.0 * kappa);
}

#[test]
fn signal_mode_is_far_narrower_than_idler_and_pump() {
    let g = reference();
    let t = g.static_tuning();
    let s = mode_linewidth(1, t.idler, t.signal, &g).unwrap();
    let i = mode_linewidth(-1, t.idler, t.signal, &g).unwrap();
    let p = mode_linewidth(0, t.idler, t.signal, &g).unwrap();
    assert!(s < i / 1000.0, "signal {s:e}, idler {i:e}");
    assert!(s < p / 1000.0, "signal {s:e}, pump {p:e}");
}

#[test]
fn resonance_shift_is_odd_about_closed_filter() {
    let g = reference();
    for x in [0.05, 0.2, 0.5, 1.0, 2.0, 3.0] {
        let up = resonance_shift(signal_offset_for_phase(PI + x, &g), &g).unwrap();
        let down = resonance_shift(signal_offset_for_phase(PI - x, &g), &g).unwrap();
        assert!(up.abs() > 0.0);
        assert!((up + down).abs() <= 0.01 * up.abs(), "x = {x}: {up:e} vs {down:e}");
    }
}

#[test]
fn decoupled_aux_ring_leaves_spectrum_unchanged() {
    let g = reference();
    let t = g.static_tuning();
    let grid: Vec<f64> = (0..2_001).map(|j| g.omega_pump + (-12.0 + 24.0 * j as f64 / 2_000.0) * g.fsr()).collect();
    let bare = circulating_response(&grid, t.idler, t.signal, &g).unwrap();
    let aux = aux_circulating_response(&grid, 1.0, &g).unwrap();
    for (a, b) in [
        (&bare.circulating, &aux.circulating),
        (&bare.signal_out, &aux.signal_out),
        (&bare.idler_out, &aux.idler_out),
        (&bare.drop, &aux.drop),
    ] {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-30));
        }
    }
}

#[test]
fn mode_arithmetic_matches_pair_rules() {
    let m = mode_arithmetic(0);
    assert_eq!((m.signal, m.idler, m.suppressed, m.convertible), (1, -1, 9, 5));
    let m = mode_arithmetic(3);
    assert_eq!((m.signal, m.idler, m.suppressed, m.convertible), (13, -13, 57, 29));
    let g = reference();
    let [ws, wi, _, _] = mode_arithmetic(0).omegas(&g);
    assert!((ws + wi - 2.0 * g.omega_pump).abs() < 1e-3);
}

#[test]
fn invalid_grid_is_rejected() {
    let g = reference();
    assert!(circulating_response(&[], 0.0, 0.0, &g).is_err());
    assert!(circulating_response(&[2.0, 1.0], 0.0, 0.0, &g).is_err());
}
