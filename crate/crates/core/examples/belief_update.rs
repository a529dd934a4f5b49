//! Bayesian bookkeeping of one pump bin followed by a partial release,
//! starting from a hand-written bin table.

use muxsource::dynamics::BinOutcomeTable;
use muxsource::inference::{pump_update, release_update, AcceptanceVerdict, Belief, ReleaseStages};

fn table(initial: usize, rows: &[(usize, usize, usize, u64)]) -> BinOutcomeTable {
    let shifted: Vec<_> = rows.iter().map(|&(n, e, l, c)| (n + initial, e, l, c)).collect();
    BinOutcomeTable {
        setting: 0.2,
        initial,
        tau_bin: 1e-10,
        decision_time: 0.88e-10,
        n_traj: rows.iter().map(|r| r.3).sum(),
        cutoff: 8,
        counts: shifted,
        residual_idler: 0.0,
        top_shell: 0.0,
    }
}

fn main() -> muxsource::Result<()> {
    // (n_s, idlers before the decision, idlers after it, count)
    let rows = [(0, 0, 0, 800), (1, 1, 0, 150), (1, 0, 1, 10), (2, 2, 0, 30), (2, 1, 1, 10)];
    let tables: Vec<BinOutcomeTable> = (0..=2).map(|n| table(n, &rows)).collect();
    let refs: Vec<&BinOutcomeTable> = tables.iter().collect();

    let pumped = pump_update(&Belief::certain(0), 0, &refs, 0.9)?;
    let two = pumped.children.iter().find(|(o, _)| o.decision == 2).map(|(_, b)| b.clone()).unwrap_or_default();
    println!("after pumping, x* = 2 has mass {:.4e}: {:?}", two.total(), two.marginal());

    let stages = ReleaseStages {
        early: (0.52, 0.46),
        late: (0.5, 0.47),
    };
    let released = release_update(&two, 2, &stages, 0.9)?;
    for (obs, b) in &released.children {
        let v = AcceptanceVerdict::judge(&b.marginal(), 0.9, 0.5);
        println!(
            "released, x = {} then x* = {}: mass {:.3e}, fidelity {:.4}, accepted {}",
            obs.bin_end,
            obs.decision,
            b.total(),
            v.fidelity,
            v.accepted
        );
    }
    Ok(())
}
