use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chain::{norm_sqr, Sector, SectorOperator, Stepper};
use super::master::{evolve, DensityMatrix};
use super::trajectory::{Channel, Engine, TOP_SHELL_LIMIT};
use super::DynamicsParams;
use crate::error::{Error, Result};
use crate::numeric::bisect;

pub(crate) const MAX_CUTOFF: usize = 62;

/// No-jump survival of the vacuum: `p = 1 − |⟨0,0|ψ̃(t_end)⟩|²` with `ψ̃` evolved under
/// `H_eff` alone. Returns `(p, largest normalised top-shell population)`.
fn no_jump_pair_probability(params: &DynamicsParams, t_end: f64) -> (f64, f64) {
    let sector = Sector::new(0, params.cutoff);
    let op = SectorOperator::new(sector, params);
    let mut psi = vec![Complex64::new(0.0, 0.0); sector.len];
    psi[0] = Complex64::new(1.0, 0.0);
    if params.pump.scale == 0.0 {
        return (0.0, 0.0);
    }
    let steps = (t_end / params.step()).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let (half, full) = (op.propagator(0.5 * h), op.propagator(h));
    let mut st = Stepper::default();
    let x = |t: f64| params.pump.energy(t);
    let mut top: f64 = 0.0;
    for k in 0..steps {
        st.step(&op, &x, k as f64 * h, h, &half, &full, &mut psi);
        top = top.max(psi[sector.len - 1].norm_sqr() / norm_sqr(&psi));
    }
    (1.0 - psi[0].norm_sqr(), top)
}

/// Probability that at least one pair is created over the pump pulse.
pub fn pair_probability(params: &DynamicsParams) -> f64 {
    no_jump_pair_probability(params, params.pump.quiet_time()).0
}

/// A pump scale together with the pair probability it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target: f64,
    pub scale: f64,
    pub achieved: f64,
    pub cutoff: usize,
}

/// Pump scale `X₀` whose pair probability equals `target`, at the cutoff in `params`.
pub fn calibrate_pump(target: f64, params: &DynamicsParams) -> Result<Calibration> {
    params.validate()?;
    if !(target > 0.0 && target <= 0.7) {
        return Err(Error::invalid(format!("pump setting {target} outside (0, 0.7]")));
    }
    let t_end = params.pump.quiet_time();
    let p_of = |x0: f64| no_jump_pair_probability(&params.with_pump_scale(x0), t_end);
    let unreachable = |reached: f64| Error::UnreachablePairProbability {
        target,
        reached,
        cutoff: params.cutoff,
    };
    let mut hi = 0.01 * params.kappa_pump;
    loop {
        let (p, top) = p_of(hi);
        if top > TOP_SHELL_LIMIT {
            return Err(unreachable(p));
        }
        if p >= target {
            break;
        }
        hi *= 2.0;
        if hi > 1e6 * params.kappa_pump {
            return Err(unreachable(p));
        }
    }
    let scale = bisect(|x0| p_of(x0).0 - target, 0.0, hi, 1e-13).ok_or_else(|| unreachable(0.0))?;
    Ok(Calibration {
        target,
        scale,
        achieved: p_of(scale).0,
        cutoff: params.cutoff,
    })
}

/// Largest ensemble top-shell population over the pump pulse from `|n0, 0⟩`.
fn ensemble_top_shell(params: &DynamicsParams, n0: usize) -> Result<f64> {
    let rho = DensityMatrix::fock(n0, 0, params.cutoff)?;
    let mut worst: f64 = 0.0;
    evolve(&rho, 0.0, params.pump.quiet_time(), params, true, |_, r| {
        worst = worst.max(r.top_shell_population() / r.trace());
    });
    Ok(worst)
}

/// Calibrate at the smallest cutoff (starting from `params.cutoff`, raised in
/// steps of 4) whose ensemble top-shell population stays below 1e-4 for every
/// initial signal number up to `max_initial`.
pub fn select_cutoff(target: f64, params: &DynamicsParams, max_initial: usize) -> Result<Calibration> {
    let mut cutoff = params.cutoff.max(max_initial + 4);
    loop {
        let p = params.with_cutoff(cutoff);
        let attempt = calibrate_pump(target, &p).and_then(|cal| {
            let pumped = p.with_pump_scale(cal.scale);
            let top = ensemble_top_shell(&pumped, max_initial)?;
            if top > TOP_SHELL_LIMIT {
                Err(Error::Truncation {
                    cutoff,
                    population: top,
                    limit: TOP_SHELL_LIMIT,
                })
            } else {
                Ok(cal)
            }
        });
        match attempt {
            Ok(cal) => return Ok(cal),
            Err(Error::Truncation { .. } | Error::UnreachablePairProbability { .. }) if cutoff + 4 <= MAX_CUTOFF => {
                log::debug!("raising Fock cutoff from {cutoff} for pump setting {target}");
                cutoff += 4;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Monte-Carlo joint distribution of (final signal number, idler emissions up
/// to the decision time, idler emissions after it) for one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinOutcomeTable {
    pub setting: f64,
    pub initial: usize,
    pub tau_bin: f64,
    pub decision_time: f64,
    pub n_traj: u64,
    pub cutoff: usize,
    /// `(n_s, k_early, k_late, count)`, sorted.
    pub counts: Vec<(usize, usize, usize, u64)>,
    /// Trajectory mean of the idler population left at the bin end.
    pub residual_idler: f64,
    /// Trajectory mean of the largest top-shell population.
    pub top_shell: f64,
}

impl BinOutcomeTable {
    pub fn probability(&self, ns: usize, early: usize, late: usize) -> f64 {
        self.counts
            .iter()
            .find(|c| (c.0, c.1, c.2) == (ns, early, late))
            .map_or(0.0, |c| c.3 as f64 / self.n_traj as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.3).sum()
    }

    /// `P(n_s)` marginal.
    pub fn signal_marginal(&self) -> Vec<f64> {
        let n = self.counts.iter().map(|c| c.0).max().unwrap_or(0);
        let mut out = vec![0.0; n + 1];
        for c in &self.counts {
            out[c.0] += c.3 as f64 / self.n_traj as f64;
        }
        out
    }

    /// Iterate `(n_s, k_early, k_late, probability)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let n = self.n_traj as f64;
        self.counts.iter().map(move |c| (c.0, c.1, c.2, c.3 as f64 / n))
    }
}

/// Deterministic per-trajectory generator from (master seed, table id, trajectory index).
pub(crate) fn trajectory_rng(master: u64, table_id: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(table_id.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

struct TrajectorySummary {
    outcomes: Vec<(usize, usize, usize)>,
    residual_idler: Vec<f64>,
    top: f64,
}

/// Simulate `n_traj` trajectories from `|n0, 0⟩` and tabulate them for every
/// bin length in `tau_bins` (sorted ascending) at once; the pump pulse does not
/// depend on the bin length, so one trajectory serves all of them.
fn simulate_tables(
    params: &DynamicsParams,
    setting: f64,
    n0: usize,
    tau_bins: &[f64],
    decision_delay: f64,
    n_traj: u64,
    seed: u64,
) -> Result<Vec<BinOutcomeTable>> {
    if tau_bins.iter().any(|&t| t <= decision_delay) {
        return Err(Error::invalid("every bin must be longer than the decision delay"));
    }
    if tau_bins.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("bin lengths must be strictly increasing"));
    }
    let engine = Engine::new(params, 0.0);
    let sector = Sector::new(n0 as i64, params.cutoff);
    let mut start = vec![Complex64::new(0.0, 0.0); sector.len];
    start[0] = Complex64::new(1.0, 0.0);
    let t_max = *tau_bins.last().ok_or_else(|| Error::invalid("no bin lengths"))?;
    let table_id = format!("p={setting:.6e};n0={n0};N={}", params.cutoff);
    let summaries: Vec<TrajectorySummary> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, &table_id, i);
            let out = engine.simulate(sector, start.clone(), t_max, tau_bins, &mut rng);
            let mut outcomes = Vec::with_capacity(tau_bins.len());
            let mut residual = Vec::with_capacity(tau_bins.len());
            for (snap, &tau) in out.snapshots.iter().zip(tau_bins) {
                let split = tau - decision_delay;
                let (mut early, mut late) = (0, 0);
                for &(t, c) in &out.jumps {
                    if c == Channel::IdlerOut && t <= tau {
                        if t <= split {
                            early += 1;
                        } else {
                            late += 1;
                        }
                    }
                }
                let dist = snap.signal_distribution(params.cutoff);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut ns = dist.len() - 1;
                for (k, p) in dist.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        ns = k;
                        break;
                    }
                }
                outcomes.push((ns, early, late));
                residual.push(snap.mean_idler());
            }
            TrajectorySummary {
                outcomes,
                residual_idler: residual,
                top: out.max_top_shell,
            }
        })
        .collect();

    let top = summaries.iter().map(|s| s.top).sum::<f64>() / n_traj as f64;
    if top > TOP_SHELL_LIMIT {
        return Err(Error::Truncation {
            cutoff: params.cutoff,
            population: top,
            limit: TOP_SHELL_LIMIT,
        });
    }
    let tables = tau_bins
        .iter()
        .enumerate()
        .map(|(b, &tau)| {
            let mut counts: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
            let mut residual = 0.0;
            for s in &summaries {
                *counts.entry(s.outcomes[b]).or_default() += 1;
                residual += s.residual_idler[b];
            }
            BinOutcomeTable {
                setting,
                initial: n0,
                tau_bin: tau,
                decision_time: tau - decision_delay,
                n_traj,
                cutoff: params.cutoff,
                counts: counts.into_iter().map(|((a, b, c), n)| (a, b, c, n)).collect(),
                residual_idler: residual / n_traj as f64,
                top_shell: top,
            }
        })
        .collect();
    Ok(tables)
}

/// Calibrate the pump for `setting` and tabulate one bin of length `tau_bin`
/// starting from `initial` stored signal photons.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bin_table(
    setting: f64,
    initial: usize,
    n_traj: u64,
    tau_bin: f64,
    decision_delay: f64,
    params: &DynamicsParams,
    seed: u64,
) -> Result<BinOutcomeTable> {
    if initial > 2 {
        return Err(Error::invalid("initial signal number must be 0, 1 or 2"));
    }
    if n_traj == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let pumped = if setting == 0.0 {
        params.with_pump_scale(0.0).with_cutoff(params.cutoff.max(initial + 4))
    } else {
        let cal = select_cutoff(setting, params, initial)?;
        params.with_cutoff(cal.cutoff).with_pump_scale(cal.scale)
    };
    let mut tables = simulate_tables(&pumped, setting, initial, &[tau_bin], decision_delay, n_traj, seed)?;
    let table = tables.remove(0);
    warn_statistics(&table);
    Ok(table)
}

fn warn_statistics(table: &BinOutcomeTable) {
    let p1 = table.signal_marginal().get(1).copied().unwrap_or(0.0);
    let sigma = (p1 * (1.0 - p1) / table.n_traj as f64).sqrt();
    if sigma > 1e-2 {
        log::warn!(
            "bin table p={} n0={} has σ(P(n=1)) = {sigma:.3e} with {} trajectories",
            table.setting,
            table.initial,
            table.n_traj
        );
    }
}

/// Grid of bin tables to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRequest {
    pub settings: Vec<f64>,
    pub initial: Vec<usize>,
    pub tau_bins: Vec<f64>,
    pub decision_delay: f64,
    pub n_traj: u64,
    pub seed: u64,
}

/// All bin tables for a pump grid × initial occupancy × bin length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSet {
    pub request: TableRequest,
    pub calibrations: Vec<Calibration>,
    pub tables: Vec<BinOutcomeTable>,
}

impl TableSet {
    pub fn build(request: &TableRequest, params: &DynamicsParams) -> Result<Self> {
        params.validate()?;
        if request.initial.iter().any(|&n| n > 2) {
            return Err(Error::invalid("initial signal number must be 0, 1 or 2"));
        }
        let max_initial = request.initial.iter().copied().max().unwrap_or(0);
        let mut calibrations = Vec::new();
        let mut tables = Vec::new();
        for &setting in &request.settings {
            let mut start = params.cutoff;
            let (cal, set) = loop {
                let cal = select_cutoff(setting, &params.with_cutoff(start), max_initial)?;
                let pumped = params.with_cutoff(cal.cutoff).with_pump_scale(cal.scale);
                log::info!("pump setting {setting}: X0 = {:.4e} rad/s, cutoff {}", cal.scale, cal.cutoff);
                let built: Result<Vec<Vec<BinOutcomeTable>>> = request
                    .initial
                    .iter()
                    .map(|&n0| {
                        simulate_tables(
                            &pumped,
                            setting,
                            n0,
                            &request.tau_bins,
                            request.decision_delay,
                            request.n_traj,
                            request.seed,
                        )
                    })
                    .collect();
                match built {
                    Ok(set) => break (cal, set),
                    Err(Error::Truncation { .. }) if cal.cutoff + 4 <= MAX_CUTOFF => start = cal.cutoff + 4,
                    Err(e) => return Err(e),
                }
            };
            for t in set.into_iter().flatten() {
                warn_statistics(&t);
                tables.push(t);
            }
            calibrations.push(cal);
        }
        Ok(Self {
            request: request.clone(),
            calibrations,
            tables,
        })
    }

    pub fn get(&self, setting: f64, initial: usize, tau_bin: f64) -> Result<&BinOutcomeTable> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        self.tables
            .iter()
            .find(|t| close(t.setting, setting) && t.initial == initial && close(t.tau_bin, tau_bin))
            .ok_or(Error::MissingTable { setting, tau_bin })
    }
}
