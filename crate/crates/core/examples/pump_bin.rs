//! Calibrate the pump to a pair probability, tabulate one pumped bin by
//! quantum-jump trajectories and read off the heralded state.

use muxsource::dynamics::{estimate_bin_table, select_cutoff, DynamicsParams};
use muxsource::inference::{g2_of, pump_update, Belief};

fn main() -> muxsource::Result<()> {
    let params = DynamicsParams::reference();
    let setting = 0.05;
    let cal = select_cutoff(setting, &params, 0)?;
    println!("p = {setting}: X0 = {:.4e} rad/s at cutoff {}", cal.scale, cal.cutoff);

    let tau = 120e-12;
    let table = estimate_bin_table(setting, 0, 20_000, tau, 12e-12, &params, 1)?;
    println!("signal marginal: {:?}", &table.signal_marginal()[..3]);
    println!("residual idler at bin end: {:.2e}", table.residual_idler);

    let up = pump_update(&Belief::certain(0), 0, &[&table], 0.996)?;
    for (obs, b) in &up.children {
        let dist = b.marginal();
        let total: f64 = dist.iter().sum();
        let g2 = g2_of(&dist).map_or("undefined".to_string(), |g| format!("{g:.3}"));
        println!(
            "x* = {}: probability {:.4e}, P(n=1 | x*) = {:.4}, g2 = {g2}",
            obs.decision,
            total,
            dist.get(1).copied().unwrap_or(0.0) / total
        );
    }
    Ok(())
}
