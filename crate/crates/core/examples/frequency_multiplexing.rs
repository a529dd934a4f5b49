//! Combine independent frequency modes to reach an overall success target.

use muxsource::protocol::{frequency_multiplex_combine, modes_required};

fn main() -> muxsource::Result<()> {
    for single in [0.5, 0.7, 0.75, 0.892, 0.95] {
        let n = modes_required(single, 0.99)?;
        println!(
            "single-mode success {single}: {n} modes give {:.5}",
            frequency_multiplex_combine(single, n)?
        );
    }
    Ok(())
}
