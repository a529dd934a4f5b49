//! Steady-state spectra of the reference storage ring and the depth of the
//! filter zeros at the pump, signal and idler modes.

use muxsource::spectral::{circulating_response, mode_peak, ring_fields, DeviceGeometry};
use num_complex::Complex64;

fn main() -> muxsource::Result<()> {
    let g = DeviceGeometry::reference();
    let t = g.static_tuning();
    println!("FSR = {:.4e} rad/s, round trip {:.3e} s", g.fsr(), g.round_trip_time());

    let grid: Vec<f64> = (0..=2000).map(|k| g.omega_pump + (-1.5 + 3.0 * k as f64 / 2000.0) * g.fsr()).collect();
    let r = circulating_response(&grid, t.idler, t.signal, &g)?;
    let (i_max, p_max) = r.circulating.iter().enumerate().fold((0, 0.0), |a, (i, &p)| if p > a.1 { (i, p) } else { a });
    println!(
        "coarse grid: strongest circulating line {:.3e} at {:+.4} FSR",
        p_max,
        (r.omega[i_max] - g.omega_pump) / g.fsr()
    );

    let one = Complex64::new(1.0, 0.0);
    let at = |w: f64| ring_fields(w, t.idler, t.signal, one, None, &g);
    let (wi_peak, _) = mode_peak(-1, t.idler, t.signal, None, &g)?;
    let (ws_peak, _) = mode_peak(1, t.idler, t.signal, None, &g)?;
    let idler_peak = at(wi_peak)?.idler_out.norm_sqr();
    let signal_peak = at(ws_peak)?.signal_out.norm_sqr();
    for (name, offset) in [("pump", 0), ("signal", 1), ("idler", -1)] {
        let f = at(g.mode_frequency(offset))?;
        println!(
            "{name:>6} mode: idler out / peak = {:.3e}, signal out / peak = {:.3e}",
            f.idler_out.norm_sqr() / idler_peak,
            f.signal_out.norm_sqr() / signal_peak
        );
    }
    Ok(())
}
