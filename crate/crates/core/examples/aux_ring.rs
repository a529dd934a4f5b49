//! Mode splitting by the auxiliary ring: peak circulating power of the
//! usable pair modes with and without it.

use muxsource::spectral::{mode_arithmetic, mode_peak, DeviceGeometry};

fn main() -> muxsource::Result<()> {
    let g = DeviceGeometry::reference();
    let t = g.static_tuning();
    let nu_a = Some(g.aux_through);
    let suppressed = mode_arithmetic(0).suppressed;
    let bare = mode_peak(suppressed, t.idler, t.signal, None, &g)?.1;
    let split = mode_peak(suppressed, t.idler, t.signal, nu_a, &g)?.1;
    println!("suppressed mode {suppressed:+}: peak ratio {:.3e}", split / bare);
    for p in 0..4 {
        let m = mode_arithmetic(p);
        for offset in [m.signal, m.idler] {
            if offset == suppressed {
                continue;
            }
            let a = mode_peak(offset, t.idler, t.signal, None, &g)?.1;
            let b = mode_peak(offset, t.idler, t.signal, nu_a, &g)?.1;
            println!("mode {offset:+3}: relative change {:+.3e}", b / a - 1.0);
        }
    }
    Ok(())
}
