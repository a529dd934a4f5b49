//! Drive the command-line pipeline in-process on the smoke configuration:
//! spectra, pump tables, then protocol optimisation from the cached tables.

use std::path::PathBuf;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let out = std::env::temp_dir().join("muxsource-cli-pipeline");
    for cmd in ["spectra", "pump-table", "optimize"] {
        let args = ["muxsource", cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let code = muxsource::cli::main_with_args(args);
        println!("{cmd}: exit code {code}");
        if code != 0 {
            std::process::exit(code);
        }
    }
    let cycles = std::fs::read_to_string(out.join("optimize/cycles.csv")).expect("optimize writes cycles.csv");
    print!("{cycles}");
}
