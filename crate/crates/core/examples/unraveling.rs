//! Quantum-jump averages against the Lindblad density-matrix oracle.

use muxsource::dynamics::{unraveling_equivalence, DynamicsParams};

fn main() -> muxsource::Result<()> {
    let params = DynamicsParams::reference();
    for setting in [0.01, 0.05, 0.25] {
        for c in unraveling_equivalence(setting, &params, 2_000, 42)? {
            println!(
                "p = {setting:<5} {:<18} t = {:.2e} s: {:.5e} ± {:.1e} vs {:.5e} ({:.2}σ)",
                c.quantity,
                c.time,
                c.trajectory_mean,
                c.standard_error,
                c.oracle,
                c.deviation_sigmas()
            );
        }
    }
    Ok(())
}
