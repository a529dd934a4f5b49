use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::cache::{content_key, Cache};
use super::config::ExperimentConfig;
use super::output::{num, write_json, Table};
use crate::dynamics::{residual_idler, unraveling_equivalence, DynamicsParams, TableRequest, TableSet};
use crate::error::{Error, Result};
use crate::inference::{g2_of, pump_update, Belief};
use crate::protocol::{
    build_libraries, frequency_multiplex_combine, modes_required, optimize, BinLibrary, BinModel, OptimizationResult,
    ProtocolConfig, Screen, SearchSpace,
};
use crate::spectral::{
    aux_circulating_response, circulating_response, coupling_rate, mode_linewidth, mode_peak, resonance_shift,
    signal_offset_for_phase, DeviceGeometry, Filter,
};

/// Pump settings checked by `verify-dynamics`.
pub const VERIFICATION_SETTINGS: [f64; 3] = [0.01, 0.05, 0.25];

/// Everything a subcommand needs: the validated config, where to write and the cache.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub cache: Cache,
}

impl Context {
    pub fn new(config: ExperimentConfig, out_dir: PathBuf, cache: Cache) -> Self {
        Self { config, out_dir, cache }
    }

    fn write(&self, rel: &str, table: &Table, artifacts: &mut Vec<PathBuf>) -> Result<()> {
        table.write(&self.out_dir.join(rel))?;
        artifacts.push(PathBuf::from(rel));
        Ok(())
    }
}

// ---------------------------------------------------------------- spectra

/// Uniform grid in FSR units over `[-span, span]` refined to a twentieth of
/// the linewidth around every ring mode inside the window.
pub fn spectral_grid(g: &DeviceGeometry, span: f64, points: usize, aux: &[Option<f64>]) -> Vec<f64> {
    let fsr = g.fsr();
    let t = g.static_tuning();
    let mut grid: Vec<f64> = (0..points)
        .map(|k| -span + 2.0 * span * k as f64 / (points - 1) as f64)
        .collect();
    let reach = span.floor() as i64;
    for k in -reach..=reach {
        let fwhm = mode_linewidth(k, t.idler, t.signal, g).unwrap_or(0.01 * fsr) / fsr;
        for &a in aux {
            let center = mode_peak(k, t.idler, t.signal, a, g)
                .map(|(w, _)| (w - g.omega_pump) / fsr)
                .unwrap_or(k as f64);
            grid.extend((-200..=200).map(|j| center + f64::from(j) * fwhm / 20.0));
        }
    }
    grid.retain(|d| d.abs() <= span);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn spectrum_table(g: &DeviceGeometry, span: f64, points: usize) -> Result<Table> {
    let grid = spectral_grid(g, span, points, &[None]);
    let omega: Vec<f64> = grid.iter().map(|d| g.omega_pump + d * g.fsr()).collect();
    let t = g.static_tuning();
    let r = circulating_response(&omega, t.idler, t.signal, g)?;
    let mut table = Table::new(&[
        "omega_detuning_over_fsr [1]",
        "p_circ [|s_f|^2]",
        "p_signal_out [|s_f|^2]",
        "p_idler_out [|s_f|^2]",
        "p_drop [|s_f|^2]",
    ]);
    for (i, d) in grid.iter().enumerate() {
        table.push_nums(&[*d, r.circulating[i], r.signal_out[i], r.idler_out[i], r.drop[i]]);
    }
    Ok(table)
}

pub fn aux_spectrum_table(g: &DeviceGeometry, span: f64, points: usize) -> Result<Table> {
    let nu_a = g.aux_through;
    let grid = spectral_grid(g, span, points, &[None, Some(nu_a)]);
    let omega: Vec<f64> = grid.iter().map(|d| g.omega_pump + d * g.fsr()).collect();
    let t = g.static_tuning();
    let plain = circulating_response(&omega, t.idler, t.signal, g)?;
    let with_aux = aux_circulating_response(&omega, nu_a, g)?;
    let mut table = Table::new(&["omega_detuning_over_fsr [1]", "p_circ_no_aux [|s_f|^2]", "p_circ_aux [|s_f|^2]"]);
    for (i, d) in grid.iter().enumerate() {
        table.push_nums(&[*d, plain.circulating[i], with_aux.circulating[i]]);
    }
    Ok(table)
}

/// Signal coupling rate and resonance shift against `ψ_s(ω_s)`, both in units
/// of the static idler coupling `κ_i(ω_i)`.
pub fn signal_filter_table(g: &DeviceGeometry, phase_points: usize) -> Result<Table> {
    let t = g.static_tuning();
    let kappa_i = coupling_rate(g.omega_idler(), t.idler, Filter::Idler, g)?;
    let mut table = Table::new(&["psi_s [rad]", "kappa_s_over_kappa_i [1]", "delta_s_over_kappa_i [1]"]);
    for k in 0..phase_points {
        let psi = std::f64::consts::TAU * (k as f64 + 0.5) / phase_points as f64;
        let dps = signal_offset_for_phase(psi, g);
        let kappa_s = coupling_rate(g.omega_signal(), dps, Filter::Signal, g)?;
        let shift = resonance_shift(dps, g).unwrap_or(f64::NAN);
        table.push_nums(&[psi, kappa_s / kappa_i, shift / kappa_i]);
    }
    Ok(table)
}

pub fn spectra(ctx: &Context) -> Result<Vec<PathBuf>> {
    let g = ctx.config.geometry();
    g.validate()?;
    let s = &ctx.config.spectra;
    let mut artifacts = Vec::new();
    ctx.write("spectra/spectrum.csv", &spectrum_table(&g, s.span_fsr, s.points)?, &mut artifacts)?;
    let aux_span = s.span_fsr.max(10.5);
    ctx.write("spectra/spectrum_aux.csv", &aux_spectrum_table(&g, aux_span, s.points)?, &mut artifacts)?;
    ctx.write("spectra/signal_filter.csv", &signal_filter_table(&g, s.phase_points)?, &mut artifacts)?;
    Ok(artifacts)
}

// ------------------------------------------------------------- pump tables

#[derive(Serialize)]
struct SettingKey<'a> {
    params: &'a DynamicsParams,
    setting: f64,
    start_cutoff: usize,
    tau_bins: &'a [f64],
    decision_delay: f64,
    n_traj: u64,
    seed: u64,
    initial: [usize; 3],
}

/// Whether missing tables may be simulated or must already be cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSource {
    BuildMissing,
    CacheOnly,
}

pub struct Libraries {
    pub libraries: Vec<BinLibrary>,
    pub sets: Vec<TableSet>,
}

impl Libraries {
    pub fn models(&self) -> Vec<&dyn BinModel> {
        self.libraries.iter().map(|l| l as &dyn BinModel).collect()
    }
}

pub fn protocol_screen(config: &ExperimentConfig) -> Screen {
    Screen {
        efficiency: config.protocol.efficiency,
        fidelity_threshold: config.protocol.fidelity_threshold,
        g2_threshold: config.protocol.g2_threshold,
    }
}

/// Tables for every bin length over the configured pump grid, one cache
/// entry per setting.
pub fn load_libraries(
    config: &ExperimentConfig,
    cache: &Cache,
    screen: Option<Screen>,
    source: TableSource,
) -> Result<Libraries> {
    let params = config.dynamics_params();
    params.validate()?;
    let taus = &config.protocol.tau_bins;
    let delay = config.dynamics.decision_delay;
    let mut sets = Vec::new();
    let libraries = build_libraries(
        &config.protocol.pump_settings,
        taus,
        delay,
        params.kappa_loss,
        config.release_limits(),
        screen,
        |setting, start| {
            let start = start.max(params.cutoff);
            let key = content_key(&SettingKey {
                params: &params,
                setting,
                start_cutoff: start,
                tau_bins: taus,
                decision_delay: delay,
                n_traj: config.run.n_traj,
                seed: config.run.seed,
                initial: [0, 1, 2],
            })?;
            let set = match cache.load::<TableSet>("tables", &key)? {
                Some(set) => set,
                None if source == TableSource::CacheOnly => {
                    return Err(Error::Cache(format!(
                        "no cached pump tables for setting {setting} in {}; run the `pump-table` subcommand \
                         with this config (and seed) first",
                        cache.root().display()
                    )))
                }
                None => {
                    let request = TableRequest {
                        settings: vec![setting],
                        initial: vec![0, 1, 2],
                        tau_bins: taus.clone(),
                        decision_delay: delay,
                        n_traj: config.run.n_traj,
                        seed: config.run.seed,
                    };
                    log::info!("building pump tables for setting {setting}");
                    let set = TableSet::build(&request, &params.with_cutoff(start))?;
                    cache.store("tables", &key, &set)?;
                    set
                }
            };
            sets.push(set.clone());
            Ok(set)
        },
    )?;
    Ok(Libraries { libraries, sets })
}

pub fn pump_table(ctx: &Context) -> Result<Vec<PathBuf>> {
    let libs = load_libraries(&ctx.config, &ctx.cache, Some(protocol_screen(&ctx.config)), TableSource::BuildMissing)?;
    let mut counts = Table::new(&[
        "setting [1]",
        "tau_bin [s]",
        "initial_n [1]",
        "final_n [1]",
        "idler_before_decision [1]",
        "idler_after_decision [1]",
        "count [1]",
        "n_traj [1]",
    ]);
    let mut summary = Table::new(&[
        "setting [1]",
        "tau_bin [s]",
        "initial_n [1]",
        "pump_scale [rad/s]",
        "cutoff [1]",
        "residual_idler [1]",
        "top_shell [1]",
    ]);
    for set in &libs.sets {
        let cal = &set.calibrations[0];
        for t in &set.tables {
            for &(n, e, l, c) in &t.counts {
                counts.push(vec![
                    num(t.setting),
                    num(t.tau_bin),
                    t.initial.to_string(),
                    n.to_string(),
                    e.to_string(),
                    l.to_string(),
                    c.to_string(),
                    t.n_traj.to_string(),
                ]);
            }
            summary.push(vec![
                num(t.setting),
                num(t.tau_bin),
                t.initial.to_string(),
                num(cal.scale),
                t.cutoff.to_string(),
                num(t.residual_idler),
                num(t.top_shell),
            ]);
        }
    }
    let mut artifacts = Vec::new();
    ctx.write("pump-table/counts.csv", &counts, &mut artifacts)?;
    ctx.write("pump-table/summary.csv", &summary, &mut artifacts)?;
    Ok(artifacts)
}

// --------------------------------------------------------- verify-dynamics

/// Outcome of the dynamics self-checks; `passed` is false if any check failed.
pub struct Verification {
    pub artifacts: Vec<PathBuf>,
    pub passed: bool,
}

pub fn verify_dynamics(ctx: &Context) -> Result<Verification> {
    let params = ctx.config.dynamics_params();
    let mut table = Table::new(&[
        "setting [1]",
        "quantity",
        "time [s]",
        "trajectory_mean [1]",
        "standard_error [1]",
        "oracle [1]",
        "deviation [sigma]",
        "passed",
    ]);
    let mut passed = true;
    for setting in VERIFICATION_SETTINGS {
        for c in unraveling_equivalence(setting, &params, ctx.config.run.n_traj, ctx.config.run.seed)? {
            passed &= c.passed();
            table.push(vec![
                num(c.setting),
                c.quantity.clone(),
                num(c.time),
                num(c.trajectory_mean),
                num(c.standard_error),
                num(c.oracle),
                num(c.deviation_sigmas()),
                c.passed().to_string(),
            ]);
        }
    }
    let mut residual = Table::new(&["setting [1]", "initial_n [1]", "tau_bin [s]", "residual_idler [1]"]);
    for setting in VERIFICATION_SETTINGS {
        for n0 in 0..=2 {
            for &tau in &ctx.config.protocol.tau_bins {
                residual.push_nums(&[setting, n0 as f64, tau, residual_idler(setting, n0, tau, &params)?]);
            }
        }
    }
    let mut artifacts = Vec::new();
    ctx.write("verify-dynamics/unraveling.csv", &table, &mut artifacts)?;
    ctx.write("verify-dynamics/residual_idler.csv", &residual, &mut artifacts)?;
    Ok(Verification { artifacts, passed })
}

// ----------------------------------------------------------------- optimize

/// The part of an optimised cycle needed to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub bins: usize,
    pub success: f64,
    pub carried: bool,
    pub pump: Vec<f64>,
    pub config: ProtocolConfig,
}

pub fn optimization_tables(res: &OptimizationResult) -> (Table, Table, Table) {
    let mut cycles = Table::new(&[
        "bins [1]",
        "tau_bin [s]",
        "emission_time [s]",
        "success [1]",
        "carried",
        "release_cap [1]",
        "evacuation_fidelity [1]",
        "forced_evacuation_bin [1]",
        "discarded [1]",
        "truncated [1]",
    ]);
    let mut schedules = Table::new(&["bins [1]", "tau_bin [s]", "bin [1]", "pump_setting [1]", "sample_node"]);
    for c in &res.cycles {
        cycles.push(vec![
            c.bins.to_string(),
            num(c.tau_bin),
            num(c.bins as f64 * c.tau_bin),
            num(c.success),
            c.carried.to_string(),
            c.config.release_cap.to_string(),
            num(c.config.evacuation_fidelity),
            c.config.forced_evacuation.map_or(String::from("none"), |m| m.to_string()),
            num(c.discarded),
            num(c.truncated),
        ]);
        for (b, &p) in c.pump.iter().enumerate() {
            let node = c.config.pump_samples.iter().any(|&(k, _)| k == b + 1);
            schedules.push(vec![
                c.bins.to_string(),
                num(c.tau_bin),
                (b + 1).to_string(),
                num(p),
                node.to_string(),
            ]);
        }
    }
    let mut curves = Table::new(&["tau_bin [s]", "bins [1]", "emission_time [s]", "success [1]"]);
    for c in &res.curves {
        for (m, &s) in c.success.iter().enumerate() {
            curves.push_nums(&[c.tau_bin, (m + 1) as f64, (m + 1) as f64 * c.tau_bin, s]);
        }
    }
    (cycles, schedules, curves)
}

pub fn run_optimization(config: &ExperimentConfig, libs: &Libraries) -> Result<OptimizationResult> {
    optimize(&libs.models(), &config.base_protocol(), &config.search_space())
}

fn write_optimization(ctx: &Context, dir: &str, res: &OptimizationResult, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let (cycles, schedules, curves) = optimization_tables(res);
    ctx.write(&format!("{dir}/cycles.csv"), &cycles, artifacts)?;
    ctx.write(&format!("{dir}/schedules.csv"), &schedules, artifacts)?;
    ctx.write(&format!("{dir}/tau_curves.csv"), &curves, artifacts)?;
    Ok(())
}

pub fn optimize_command(ctx: &Context) -> Result<Vec<PathBuf>> {
    let libs = load_libraries(&ctx.config, &ctx.cache, Some(protocol_screen(&ctx.config)), TableSource::CacheOnly)?;
    let res = run_optimization(&ctx.config, &libs)?;
    let mut artifacts = Vec::new();
    write_optimization(ctx, "optimize", &res, &mut artifacts)?;
    let policy: Vec<PolicyEntry> = res
        .cycles
        .iter()
        .map(|c| PolicyEntry {
            bins: c.bins,
            success: c.success,
            carried: c.carried,
            pump: c.pump.clone(),
            config: c.config.clone(),
        })
        .collect();
    write_json(&ctx.out_dir.join("optimize/policy.json"), &policy)?;
    artifacts.push(PathBuf::from("optimize/policy.json"));
    Ok(artifacts)
}

// -------------------------------------------------------------------- sweep

/// One point of a threshold/efficiency/loss sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub q_loss: f64,
    pub efficiency: f64,
    pub fidelity_threshold: f64,
    pub g2_threshold: f64,
    pub release_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub spec: SweepSpec,
    /// Best `𝒫(M)` for `M = 1..=max_bins`.
    pub success: Vec<f64>,
    pub best_tau_bin: f64,
}

#[derive(Serialize)]
struct PointKey<'a> {
    spec: &'a SweepSpec,
    dynamics: &'a super::config::DynamicsSection,
    protocol: &'a super::config::ProtocolSection,
    n_traj: u64,
    seed: u64,
    space: &'a SearchSpace,
    screen: Screen,
}

fn sweep_screen(config: &ExperimentConfig, specs: &[SweepSpec]) -> Screen {
    let mut s = protocol_screen(config);
    for p in specs {
        s.efficiency = s.efficiency.max(p.efficiency);
        s.fidelity_threshold = s.fidelity_threshold.min(p.fidelity_threshold);
        s.g2_threshold = s.g2_threshold.max(p.g2_threshold);
    }
    s
}

/// Optimise every spec, reusing cached points; tables are built once per `Q_L`
/// with a screen loose enough for every spec.
pub fn run_sweep(config: &ExperimentConfig, cache: &Cache, specs: &[SweepSpec]) -> Result<Vec<SweepPoint>> {
    let screen = sweep_screen(config, specs);
    let mut by_q: BTreeMap<u64, Vec<SweepSpec>> = BTreeMap::new();
    for s in specs {
        by_q.entry(s.q_loss.to_bits()).or_default().push(*s);
    }
    let mut done: BTreeMap<String, SweepPoint> = BTreeMap::new();
    for (q_bits, group) in by_q {
        let cq = config.with_q_loss(f64::from_bits(q_bits));
        let mut libs: Option<Libraries> = None;
        for spec in group {
            let mut c = cq.clone();
            c.protocol.efficiency = spec.efficiency;
            c.protocol.fidelity_threshold = spec.fidelity_threshold;
            c.protocol.g2_threshold = spec.g2_threshold;
            c.protocol.release_cap = spec.release_cap;
            let space = c.search_space();
            let key = content_key(&PointKey {
                spec: &spec,
                dynamics: &c.dynamics,
                protocol: &c.protocol,
                n_traj: c.run.n_traj,
                seed: c.run.seed,
                space: &space,
                screen,
            })?;
            if let Some(p) = cache.load::<SweepPoint>("sweep", &key)? {
                done.insert(key, p);
                continue;
            }
            if libs.is_none() {
                libs = Some(load_libraries(&cq, cache, Some(screen), TableSource::BuildMissing)?);
            }
            log::info!("sweep point {spec:?}");
            let res = run_optimization(&c, libs.as_ref().expect("libraries loaded"))?;
            let last = res.cycles.last().expect("at least one cycle");
            let point = SweepPoint {
                spec,
                success: res.cycles.iter().map(|c| c.success).collect(),
                best_tau_bin: last.tau_bin,
            };
            cache.store("sweep", &key, &point)?;
            done.insert(key, point);
        }
    }
    let mut out: Vec<SweepPoint> = done.into_values().collect();
    let order = |p: &SweepPoint| {
        (
            p.spec.q_loss.to_bits(),
            p.spec.release_cap,
            p.spec.g2_threshold.to_bits(),
            p.spec.fidelity_threshold.to_bits(),
            p.spec.efficiency.to_bits(),
        )
    };
    out.sort_by_key(order);
    out.dedup_by_key(|p| order(p));
    Ok(out)
}

fn sweep_table(points: &[SweepPoint], target: f64) -> Result<Table> {
    let mut t = Table::new(&[
        "q_loss [1]",
        "efficiency [1]",
        "fidelity_threshold [1]",
        "g2_threshold [1]",
        "release_cap [1]",
        "bins [1]",
        "tau_bin [s]",
        "success [1]",
        "success_minus_threshold [1]",
        "modes_required [1]",
        "combined_success [1]",
    ]);
    for p in points {
        let s = *p.success.last().unwrap_or(&0.0);
        let (modes, combined) = match modes_required(s, target) {
            Ok(n) => (n.to_string(), num(frequency_multiplex_combine(s, n)?)),
            Err(Error::UnreachableTarget { .. }) => ("inf".to_string(), num(0.0)),
            Err(e) => return Err(e),
        };
        t.push(vec![
            num(p.spec.q_loss),
            num(p.spec.efficiency),
            num(p.spec.fidelity_threshold),
            num(p.spec.g2_threshold),
            p.spec.release_cap.to_string(),
            p.success.len().to_string(),
            num(p.best_tau_bin),
            num(s),
            num(s - p.spec.fidelity_threshold),
            modes,
            combined,
        ]);
    }
    Ok(t)
}

fn spec(q_loss: f64, efficiency: f64, fidelity_threshold: f64, g2_threshold: f64, release_cap: usize) -> SweepSpec {
    SweepSpec {
        q_loss,
        efficiency,
        fidelity_threshold,
        g2_threshold,
        release_cap,
    }
}

/// Threshold × efficiency grid at the configured `Q_L`, for each release cap.
pub fn fidelity_grid_specs(config: &ExperimentConfig) -> Vec<SweepSpec> {
    let sw = &config.sweep;
    let mut v = Vec::new();
    for &cap in &sw.release_caps {
        for &f in &sw.fidelity_thresholds {
            for &e in &sw.efficiencies {
                v.push(spec(config.dynamics.q_loss, e, f, config.protocol.g2_threshold, cap));
            }
        }
    }
    v
}

/// `g²` threshold × efficiency grid at the configured fidelity threshold.
pub fn g2_grid_specs(config: &ExperimentConfig) -> Vec<SweepSpec> {
    let sw = &config.sweep;
    let mut v = Vec::new();
    for &g in &sw.g2_thresholds {
        for &e in &sw.efficiencies {
            v.push(spec(config.dynamics.q_loss, e, config.protocol.fidelity_threshold, g, config.protocol.release_cap));
        }
    }
    v
}

/// Threshold × efficiency grid for each intrinsic quality factor.
pub fn loss_grid_specs(config: &ExperimentConfig) -> Vec<SweepSpec> {
    let sw = &config.sweep;
    let mut v = Vec::new();
    for &q in &sw.q_losses {
        for &f in &sw.fidelity_thresholds {
            for &e in &sw.efficiencies {
                v.push(spec(q, e, f, config.protocol.g2_threshold, config.protocol.release_cap));
            }
        }
    }
    v
}

/// Efficiency scan at the combiner fidelity threshold for each quality factor.
pub fn efficiency_scan_specs(config: &ExperimentConfig) -> Vec<SweepSpec> {
    let sw = &config.sweep;
    let mut v = Vec::new();
    for &q in &sw.q_losses {
        for &e in &sw.efficiencies {
            v.push(spec(q, e, sw.fidelity_for_efficiency_scan, config.protocol.g2_threshold, config.protocol.release_cap));
        }
    }
    v
}

fn subset(points: &[SweepPoint], specs: &[SweepSpec]) -> Vec<SweepPoint> {
    points.iter().filter(|p| specs.contains(&p.spec)).cloned().collect()
}

pub fn sweep(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let mut specs = fidelity_grid_specs(c);
    specs.extend(g2_grid_specs(c));
    specs.extend(loss_grid_specs(c));
    specs.extend(efficiency_scan_specs(c));
    let points = run_sweep(c, &ctx.cache, &specs)?;
    let mut artifacts = Vec::new();
    ctx.write("sweep/sweep.csv", &sweep_table(&points, c.sweep.combiner_target)?, &mut artifacts)?;
    Ok(artifacts)
}

// ------------------------------------------------------------------ figures

/// Heralding statistics of one pumped bin from an empty cavity: accept
/// `x* = 1`, no storage.
pub fn fresh_herald_table(config: &ExperimentConfig, libs: &Libraries) -> Result<Table> {
    let eta = config.protocol.efficiency;
    let mut t = Table::new(&[
        "pair_probability [1]",
        "tau_bin [s]",
        "pair_probability_times_tau_bin [s]",
        "herald_probability [1]",
        "fidelity [1]",
        "g2 [1]",
    ]);
    for lib in &libs.libraries {
        for &s in lib.settings() {
            let up = pump_update(&Belief::certain(0), 0, &lib.tables(s)?, eta)?;
            let mut heralded = Belief::default();
            for (_, b) in up.children.iter().filter(|(o, _)| o.decision == 1) {
                for (&(n, l), &w) in &b.masses {
                    heralded.add(n, l, w);
                }
            }
            let dist = heralded.marginal();
            let total: f64 = dist.iter().sum();
            let fidelity = dist.get(1).copied().unwrap_or(0.0) / total;
            let g2 = g2_of(&dist).unwrap_or(f64::NAN);
            t.push_nums(&[s, lib.tau_bin, s * lib.tau_bin, total, fidelity, g2]);
        }
    }
    Ok(t)
}

fn figure_spectra(ctx: &Context, figure: u8, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let g = ctx.config.geometry();
    g.validate()?;
    let s = &ctx.config.spectra;
    if figure == 3 {
        ctx.write("figures/fig3/spectrum.csv", &spectrum_table(&g, s.span_fsr, s.points)?, artifacts)?;
        ctx.write("figures/fig3/signal_filter.csv", &signal_filter_table(&g, s.phase_points)?, artifacts)?;
    } else {
        let span = s.span_fsr.max(10.5);
        ctx.write("figures/fig4/spectrum_aux.csv", &aux_spectrum_table(&g, span, s.points)?, artifacts)?;
    }
    Ok(())
}

pub const FIGURES: [u8; 6] = [3, 4, 6, 7, 8, 9];

pub fn figures(ctx: &Context, which: &[u8]) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let mut artifacts = Vec::new();
    for &f in which {
        match f {
            3 | 4 => figure_spectra(ctx, f, &mut artifacts)?,
            6 => {
                let libs = load_libraries(c, &ctx.cache, None, TableSource::BuildMissing)?;
                ctx.write("figures/fig6/herald.csv", &fresh_herald_table(c, &libs)?, &mut artifacts)?;
            }
            7 => {
                let libs = load_libraries(c, &ctx.cache, Some(protocol_screen(c)), TableSource::BuildMissing)?;
                let res = run_optimization(c, &libs)?;
                write_optimization(ctx, "figures/fig7", &res, &mut artifacts)?;
            }
            8 => {
                let a = fidelity_grid_specs(c);
                let b = g2_grid_specs(c);
                let mut all = a.clone();
                all.extend(b.iter().copied());
                let points = run_sweep(c, &ctx.cache, &all)?;
                let target = c.sweep.combiner_target;
                ctx.write("figures/fig8/fidelity_grid.csv", &sweep_table(&subset(&points, &a), target)?, &mut artifacts)?;
                ctx.write("figures/fig8/g2_grid.csv", &sweep_table(&subset(&points, &b), target)?, &mut artifacts)?;
            }
            9 => {
                let a = loss_grid_specs(c);
                let b = efficiency_scan_specs(c);
                let mut all = a.clone();
                all.extend(b.iter().copied());
                let points = run_sweep(c, &ctx.cache, &all)?;
                let target = c.sweep.combiner_target;
                ctx.write("figures/fig9/loss_grid.csv", &sweep_table(&subset(&points, &a), target)?, &mut artifacts)?;
                ctx.write("figures/fig9/efficiency_scan.csv", &sweep_table(&subset(&points, &b), target)?, &mut artifacts)?;
            }
            other => return Err(Error::invalid(format!("unknown figure {other}; expected one of {FIGURES:?}"))),
        }
    }
    Ok(artifacts)
}
