//! Feedback driving protocol: per-bin decisions from the belief, evaluation of
//! the success probability `𝒫(M)` over the belief tree, and a coordinate-descent
//! optimiser over the control parameters.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{BinOutcomeTable, ReleaseLimits, ReleaseProfile, TableSet};
use crate::error::{Error, Result};
use crate::inference::{
    pump_update, release_update, storage_update, AcceptanceVerdict, Belief, BeliefNode, DetectionSequence,
    ReleaseStages, Update, PRUNE_THRESHOLD,
};
use crate::numeric::golden_max;

/// Discrete pump settings (pair probabilities).
pub fn pump_grid() -> Vec<f64> {
    let mut grid = vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.035];
    grid.extend((0..=18).map(|k| f64::from(50 + 25 * k) / 1000.0));
    grid.extend([0.55, 0.6, 0.65, 0.7]);
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlAction {
    Pump { setting: f64 },
    Release { retention: f64 },
    Evacuate,
    Store,
}

impl fmt::Display for ControlAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlAction::Pump { setting } => write!(f, "pump({setting})"),
            ControlAction::Release { retention } => write!(f, "release({retention:.4})"),
            ControlAction::Evacuate => f.write_str("evacuate"),
            ControlAction::Store => f.write_str("store"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// `M`.
    pub bins: usize,
    pub tau_bin: f64,
    /// `τ_D`.
    pub decision_delay: f64,
    /// `η`.
    pub efficiency: f64,
    pub fidelity_threshold: f64,
    pub g2_threshold: f64,
    /// `N_ev`.
    pub release_cap: usize,
    /// `F_ev`.
    pub evacuation_fidelity: f64,
    /// `m_ev`, the bin evacuated regardless of the record; `None` never forces evacuation.
    pub forced_evacuation: Option<usize>,
    /// `(bin, p)` interpolation nodes of the pump schedule.
    pub pump_samples: Vec<(usize, f64)>,
    /// Retention target `p_c` of a release in bin `b`, stored at index `b − 1`.
    pub release_settings: Vec<f64>,
    /// `κ_L`.
    pub kappa_loss: f64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.bins == 0 {
            return Err(Error::invalid("a cycle needs at least one bin"));
        }
        if !(self.tau_bin > self.decision_delay && self.decision_delay >= 0.0) {
            return Err(Error::invalid("bins must be longer than the decision delay"));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid(format!("detection efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !unit(self.fidelity_threshold) || !(self.g2_threshold > 0.0) {
            return Err(Error::invalid("thresholds must lie in (0, 1]"));
        }
        if self.release_cap < 2 {
            return Err(Error::invalid("release cap must be at least 2"));
        }
        if self.forced_evacuation.is_some_and(|m| m < 2 || m > self.bins) {
            return Err(Error::invalid("forced evacuation bin outside 2..=M"));
        }
        if self.pump_samples.is_empty() || self.pump_samples.iter().any(|&(b, p)| b == 0 || !unit(p)) {
            return Err(Error::invalid("pump samples need bins ≥ 1 and settings in (0, 1]"));
        }
        if self.release_settings.len() < self.bins || self.release_settings.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid("need one release retention in (0, 1) per bin"));
        }
        if !(self.kappa_loss >= 0.0) {
            return Err(Error::invalid("intrinsic loss rate must be non-negative"));
        }
        Ok(())
    }

    /// Linearly interpolated pump setting of bin `b`, before snapping.
    pub fn interpolated_pump(&self, b: usize) -> f64 {
        let mut samples = self.pump_samples.clone();
        samples.sort_by_key(|s| s.0);
        let x = b as f64;
        let first = samples[0];
        let last = samples[samples.len() - 1];
        if b <= first.0 {
            return first.1;
        }
        if b >= last.0 {
            return last.1;
        }
        for w in samples.windows(2) {
            let ((b0, p0), (b1, p1)) = (w[0], w[1]);
            if b >= b0 && b <= b1 && b1 > b0 {
                return p0 + (p1 - p0) * (x - b0 as f64) / (b1 - b0) as f64;
            }
        }
        last.1
    }

    /// Sample bins `{1, ⌈M/3⌉, ⌈2M/3⌉, last}` with `last = m_ev − 1` or `M`.
    pub fn sample_bins(bins: usize, forced_evacuation: Option<usize>) -> Vec<usize> {
        let last = forced_evacuation.map_or(bins, |m| m.saturating_sub(1).max(1));
        let set: BTreeSet<usize> = [1, bins.div_ceil(3), (2 * bins).div_ceil(3), last]
            .into_iter()
            .map(|b| b.clamp(1, last))
            .collect();
        set.into_iter().collect()
    }
}

/// Physics of one bin length: outcome tables per pump setting and release fractions.
pub trait BinModel: Sync {
    fn tau_bin(&self) -> f64;
    /// Available pump settings, ascending.
    fn settings(&self) -> &[f64];
    /// Tables for initial signal numbers `0..=2`, indexed by that number.
    fn tables(&self, setting: f64) -> Result<Vec<&BinOutcomeTable>>;
    fn release_stages(&self, retention: f64) -> Result<ReleaseStages>;
}

/// Tables for one bin length plus the release control limits.
#[derive(Debug)]
pub struct BinLibrary {
    pub tau_bin: f64,
    pub decision_delay: f64,
    pub kappa_loss: f64,
    pub limits: ReleaseLimits,
    settings: Vec<f64>,
    tables: Vec<Vec<BinOutcomeTable>>,
    stages: Mutex<HashMap<u64, ReleaseStages>>,
}

impl BinLibrary {
    pub fn new(tau_bin: f64, decision_delay: f64, kappa_loss: f64, limits: ReleaseLimits) -> Self {
        Self {
            tau_bin,
            decision_delay,
            kappa_loss,
            limits,
            settings: Vec::new(),
            tables: Vec::new(),
            stages: Mutex::new(HashMap::new()),
        }
    }

    /// Add the tables of `setting` at this bin length from a built set.
    pub fn insert(&mut self, setting: f64, set: &TableSet) -> Result<()> {
        let mut by_initial = Vec::new();
        for n0 in 0..=2 {
            by_initial.push(set.get(setting, n0, self.tau_bin)?.clone());
        }
        let pos = self.settings.partition_point(|&s| s < setting);
        self.settings.insert(pos, setting);
        self.tables.insert(pos, by_initial);
        Ok(())
    }
}

impl BinModel for BinLibrary {
    fn tau_bin(&self) -> f64 {
        self.tau_bin
    }

    fn settings(&self) -> &[f64] {
        &self.settings
    }

    fn tables(&self, setting: f64) -> Result<Vec<&BinOutcomeTable>> {
        let i = self
            .settings
            .iter()
            .position(|&s| (s - setting).abs() <= 1e-12 * s)
            .ok_or(Error::MissingTable {
                setting,
                tau_bin: self.tau_bin,
            })?;
        Ok(self.tables[i].iter().collect())
    }

    fn release_stages(&self, retention: f64) -> Result<ReleaseStages> {
        let key = retention.to_bits();
        if let Some(s) = self.stages.lock().expect("stage cache poisoned").get(&key) {
            return Ok(*s);
        }
        let profile = ReleaseProfile::for_target(retention, 0.0, self.tau_bin, self.kappa_loss, &self.limits)?;
        let stages = ReleaseStages {
            early: profile.fractions(self.tau_bin - self.decision_delay, self.kappa_loss),
            late: profile.fractions(self.tau_bin, self.kappa_loss),
        };
        self.stages.lock().expect("stage cache poisoned").insert(key, stages);
        Ok(stages)
    }
}

/// Thresholds used to screen pump settings while building libraries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub efficiency: f64,
    pub fidelity_threshold: f64,
    pub g2_threshold: f64,
}

/// Build one library per bin length over `grid` (ascending). `build(setting,
/// start_cutoff)` returns the tables for one setting at every bin length. With
/// a screen, building stops at the first setting whose fresh-cavity herald
/// fails the thresholds at every bin length even without storage.
#[allow(clippy::too_many_arguments)]
pub fn build_libraries<F>(
    grid: &[f64],
    tau_bins: &[f64],
    decision_delay: f64,
    kappa_loss: f64,
    limits: ReleaseLimits,
    screen: Option<Screen>,
    mut build: F,
) -> Result<Vec<BinLibrary>>
where
    F: FnMut(f64, usize) -> Result<TableSet>,
{
    let mut libraries: Vec<BinLibrary> = tau_bins
        .iter()
        .map(|&t| BinLibrary::new(t, decision_delay, kappa_loss, limits))
        .collect();
    let mut cutoff = 0;
    for &setting in grid {
        let set = build(setting, cutoff)?;
        cutoff = set.calibrations.iter().map(|c| c.cutoff).max().unwrap_or(cutoff);
        if let Some(s) = screen {
            let any = tau_bins.iter().try_fold(false, |acc, &tau| {
                let table = set.get(setting, 0, tau)?;
                Ok::<_, Error>(acc || fresh_herald(&[table], 0.0, kappa_loss, s)?)
            })?;
            if !any {
                log::info!("pump setting {setting} fails the thresholds at every bin length; stopping");
                break;
            }
        }
        for lib in &mut libraries {
            lib.insert(setting, &set)?;
        }
    }
    if libraries.iter().any(|l| l.settings.is_empty()) {
        return Err(Error::invalid("no pump setting passes the thresholds"));
    }
    Ok(libraries)
}

/// Whether a single herald from an empty cavity passes after storage `dt`.
fn fresh_herald(tables: &[&BinOutcomeTable], dt: f64, kappa_loss: f64, screen: Screen) -> Result<bool> {
    let up = pump_update(&Belief::certain(0), 0, tables, screen.efficiency)?;
    let heralded = merge_where(&up, |d| d == 1);
    let dist = storage_update(&heralded.marginal(), dt, kappa_loss);
    Ok(AcceptanceVerdict::judge(&dist, screen.fidelity_threshold, screen.g2_threshold).accepted)
}

fn merge_where(update: &Update, keep: impl Fn(i64) -> bool) -> Belief {
    let mut out = Belief::default();
    for (obs, b) in &update.children {
        if keep(obs.decision) {
            for (&(n, l), &w) in &b.masses {
                out.add(n, l, w);
            }
        }
    }
    out
}

/// Pump cap per bin: the largest setting whose fresh-cavity herald in bin `b`
/// still passes after storage until `t_M` (the smallest setting if none does).
pub fn pump_caps(config: &ProtocolConfig, model: &dyn BinModel) -> Result<Vec<f64>> {
    let screen = Screen {
        efficiency: config.efficiency,
        fidelity_threshold: config.fidelity_threshold,
        g2_threshold: config.g2_threshold,
    };
    let settings = model.settings();
    let first = *settings.first().ok_or_else(|| Error::invalid("bin model has no pump settings"))?;
    let mut passing = Vec::with_capacity(settings.len());
    for &s in settings {
        passing.push((s, model.tables(s)?));
    }
    (1..=config.bins)
        .map(|b| {
            let dt = (config.bins - b) as f64 * config.tau_bin;
            let mut cap = first;
            for (s, tables) in &passing {
                if fresh_herald(tables, dt, config.kappa_loss, screen)? {
                    cap = *s;
                }
            }
            Ok(cap)
        })
        .collect()
}

/// Pump setting of every bin: interpolated, snapped to the nearest available
/// setting and capped.
pub fn pump_schedule(config: &ProtocolConfig, model: &dyn BinModel, caps: &[f64]) -> Vec<f64> {
    let settings = model.settings();
    (1..=config.bins)
        .map(|b| {
            let p = config.interpolated_pump(b);
            let snapped = settings
                .iter()
                .copied()
                .min_by(|a, c| (a - p).abs().total_cmp(&(c - p).abs()))
                .unwrap_or(p);
            snapped.min(caps[b - 1])
        })
        .collect()
}

struct Plan<'a> {
    config: &'a ProtocolConfig,
    model: &'a dyn BinModel,
    pump: Vec<f64>,
    storage: ReleaseStages,
}

impl Plan<'_> {
    fn passes(&self, belief: &Belief, bin: usize) -> bool {
        let dt = (self.config.bins - bin) as f64 * self.config.tau_bin;
        let dist = storage_update(&belief.marginal(), dt, self.config.kappa_loss);
        AcceptanceVerdict::judge(&dist, self.config.fidelity_threshold, self.config.g2_threshold).accepted
    }

    fn release_passes(&self, belief: &Belief, x: i64, bin: usize) -> Result<bool> {
        let retention = self.config.release_settings[bin];
        let stages = self.model.release_stages(retention)?;
        let up = release_update(belief, x, &stages, self.config.efficiency)?;
        let heralded = merge_where(&up, |d| d == 1);
        Ok(heralded.total() > 0.0 && self.passes(&heralded, bin + 1))
    }
}

/// Action for bin `m + 1` chosen at the decision time of bin `m`.
fn decide(belief: &Belief, seq: &DetectionSequence, plan: &Plan) -> Result<ControlAction> {
    let c = plan.config;
    let m = seq.bin();
    let x = seq.decision();
    let pump = ControlAction::Pump { setting: plan.pump[m] };
    if m == 0 {
        return Ok(pump);
    }
    if c.forced_evacuation.is_some_and(|e| m + 1 >= e) {
        return Ok(ControlAction::Evacuate);
    }
    if x < 0 {
        return Ok(pump);
    }
    if x >= c.release_cap as i64 {
        return Ok(ControlAction::Evacuate);
    }
    if x <= 1 {
        if plan.passes(belief, m) {
            return Ok(ControlAction::Store);
        }
        if belief.fidelity(seq.estimate()) > c.evacuation_fidelity {
            return Ok(pump);
        }
        return Ok(ControlAction::Evacuate);
    }
    if plan.release_passes(belief, x, m)? {
        Ok(ControlAction::Release {
            retention: c.release_settings[m],
        })
    } else {
        Ok(ControlAction::Evacuate)
    }
}

/// Decision rule for the next bin given the belief at the decision time of bin `m`.
pub fn decide_action(
    belief: &Belief,
    sequence: &DetectionSequence,
    config: &ProtocolConfig,
    model: &dyn BinModel,
) -> Result<ControlAction> {
    config.validate()?;
    let caps = pump_caps(config, model)?;
    let plan = Plan {
        config,
        model,
        pump: pump_schedule(config, model, &caps),
        storage: ReleaseStages::storage(config.tau_bin, config.decision_delay, config.kappa_loss),
    };
    decide(belief, sequence, &plan)
}

/// An accepted leaf of the belief tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub sequence: DetectionSequence,
    /// `P(n^M = 1, x⃗)`.
    pub success: f64,
    /// `P(x⃗)`.
    pub probability: f64,
    pub fidelity: f64,
    pub g2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `𝒫(M)`.
    pub success: f64,
    /// Part of `success` from restarts after evacuation.
    pub from_restarts: f64,
    pub discarded: f64,
    pub truncated: f64,
    /// Bins (1-based) in which some branch released.
    pub release_bins: BTreeSet<usize>,
    pub pump: Vec<f64>,
    pub accepted: Vec<AcceptanceRecord>,
    pub tree: Option<BeliefNode>,
}

/// Evaluate `𝒫(M)`. `sub_cycles[k]` is the success probability of a fresh
/// cycle of `k` bins, used after an evacuation (`sub_cycles[0] = 0`).
pub fn evaluate_protocol(
    config: &ProtocolConfig,
    model: &dyn BinModel,
    sub_cycles: &[f64],
    keep_tree: bool,
) -> Result<Evaluation> {
    config.validate()?;
    let caps = pump_caps(config, model)?;
    evaluate_with_caps(config, model, sub_cycles, &caps, keep_tree)
}

pub fn evaluate_with_caps(
    config: &ProtocolConfig,
    model: &dyn BinModel,
    sub_cycles: &[f64],
    caps: &[f64],
    keep_tree: bool,
) -> Result<Evaluation> {
    if sub_cycles.len() < config.bins {
        return Err(Error::invalid(format!(
            "need sub-cycle values for 0..{} bins, got {}",
            config.bins,
            sub_cycles.len()
        )));
    }
    if (model.tau_bin() - config.tau_bin).abs() > 1e-12 * config.tau_bin {
        return Err(Error::invalid("bin model and config disagree on the bin length"));
    }
    let plan = Plan {
        config,
        model,
        pump: pump_schedule(config, model, caps),
        storage: ReleaseStages::storage(config.tau_bin, config.decision_delay, config.kappa_loss),
    };
    let mut eval = Evaluation {
        success: 0.0,
        from_restarts: 0.0,
        discarded: 0.0,
        truncated: 0.0,
        release_bins: BTreeSet::new(),
        pump: plan.pump.clone(),
        accepted: Vec::new(),
        tree: None,
    };
    let mut root = BeliefNode::root();
    expand(&mut root, &plan, sub_cycles, &mut eval, keep_tree)?;
    if keep_tree {
        eval.tree = Some(root);
    }
    Ok(eval)
}

fn expand(node: &mut BeliefNode, plan: &Plan, sub: &[f64], eval: &mut Evaluation, keep: bool) -> Result<()> {
    let c = plan.config;
    let m = node.sequence.bin();
    if m == c.bins {
        let dist = node.belief.marginal();
        let verdict = AcceptanceVerdict::judge(&dist, c.fidelity_threshold, c.g2_threshold);
        if verdict.accepted {
            let success = dist[1];
            eval.success += success;
            eval.accepted.push(AcceptanceRecord {
                sequence: node.sequence.clone(),
                success,
                probability: node.belief.total(),
                fidelity: verdict.fidelity,
                g2: verdict.g2.unwrap_or(f64::NAN),
            });
        }
        return Ok(());
    }
    let action = decide(&node.belief, &node.sequence, plan)?;
    node.action = Some(action);
    let x = node.sequence.decision();
    let update = match action {
        ControlAction::Evacuate => {
            let gain = node.belief.total() * sub[c.bins - m - 1];
            eval.success += gain;
            eval.from_restarts += gain;
            return Ok(());
        }
        ControlAction::Pump { setting } => {
            pump_update(&node.belief, x, &plan.model.tables(setting)?, c.efficiency)?
        }
        ControlAction::Release { retention } => {
            eval.release_bins.insert(m + 1);
            let stages = plan.model.release_stages(retention)?;
            release_update(&node.belief, x, &stages, c.efficiency)?
        }
        ControlAction::Store => release_update(&node.belief, x, &plan.storage, c.efficiency)?,
    };
    eval.truncated += update.truncated;
    eval.discarded += update.negligible;
    for (obs, belief) in update.children {
        let mass = belief.total();
        if mass < PRUNE_THRESHOLD {
            eval.discarded += mass;
            continue;
        }
        let mut child = BeliefNode {
            sequence: node.sequence.extend(obs),
            belief,
            action: None,
            children: Vec::new(),
        };
        expand(&mut child, plan, sub, eval, keep)?;
        if keep {
            node.children.push(child);
        }
    }
    Ok(())
}

/// `n p_c (1 − p_c)^{n−1}`: probability that exactly one of `n` photons stays.
pub fn release_success_closed_form(n: usize, p_c: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    n as f64 * p_c * (1.0 - p_c).powi(n as i32 - 1)
}

/// `1 − (1 − 𝒫)^{N_F}`.
pub fn frequency_multiplex_combine(success: f64, modes: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&success) || modes == 0 {
        return Err(Error::invalid("need 𝒫 in [0, 1] and at least one mode"));
    }
    Ok(1.0 - (1.0 - success).powi(modes as i32))
}

/// Smallest `N_F` with `1 − (1 − 𝒫)^{N_F} ≥ target`.
pub fn modes_required(success: f64, target: f64) -> Result<u32> {
    if !(0.0..=1.0).contains(&success) || !(0.0..1.0).contains(&target) {
        return Err(Error::invalid("need 𝒫 in [0, 1] and target in [0, 1)"));
    }
    if target == 0.0 {
        return Ok(1);
    }
    if success == 0.0 {
        return Err(Error::UnreachableTarget { target, single: success });
    }
    if success == 1.0 {
        return Ok(1);
    }
    let n = ((1.0 - target).ln() / (1.0 - success).ln()).ceil().max(1.0);
    let mut n = n as u32;
    while frequency_multiplex_combine(success, n)? < target {
        n += 1;
    }
    while n > 1 && frequency_multiplex_combine(success, n - 1)? >= target {
        n -= 1;
    }
    Ok(n)
}

/// Grid of the optimiser's discrete searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub max_bins: usize,
    /// Candidate `F_ev`; the fidelity threshold is always added.
    pub evacuation_fidelities: Vec<f64>,
    /// Candidate `N_ev`.
    pub release_caps: Vec<usize>,
    /// Maximum coordinate-descent passes per cycle length.
    pub passes: usize,
}

impl SearchSpace {
    pub fn standard(max_bins: usize, release_cap: usize) -> Self {
        Self {
            max_bins,
            evacuation_fidelities: vec![0.0, 0.5, 0.8, 0.9, 0.95],
            release_caps: (2..=release_cap.max(2)).collect(),
            passes: 3,
        }
    }
}

/// Geometric grid of `count` bin lengths over `[5, 200]` idler lifetimes.
pub fn tau_bin_grid(idler_lifetime: f64, count: usize) -> Vec<f64> {
    let (lo, hi) = (5.0 * idler_lifetime, 200.0 * idler_lifetime);
    if count <= 1 {
        return vec![lo];
    }
    (0..count)
        .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedCycle {
    pub bins: usize,
    pub tau_bin: f64,
    pub success: f64,
    pub config: ProtocolConfig,
    /// The best `M`-bin policy did not beat the `M − 1` optimum, which is
    /// reused after an idle first bin.
    pub carried: bool,
    pub pump: Vec<f64>,
    pub discarded: f64,
    pub truncated: f64,
    pub accepted: Vec<AcceptanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCurve {
    pub tau_bin: f64,
    pub success: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// Best cycle per `M` over all bin lengths.
    pub cycles: Vec<OptimizedCycle>,
    pub curves: Vec<TauCurve>,
}

/// Coordinate-descent search for every `M ≤ max_bins` and every bin length;
/// `base` supplies the fixed physics and thresholds.
pub fn optimize(models: &[&dyn BinModel], base: &ProtocolConfig, space: &SearchSpace) -> Result<OptimizationResult> {
    if models.is_empty() || space.max_bins == 0 {
        return Err(Error::invalid("need at least one bin model and one bin"));
    }
    let per_tau: Vec<Vec<OptimizedCycle>> = models
        .par_iter()
        .map(|&model| optimize_at(model, base, space))
        .collect::<Result<_>>()?;
    let cycles = (0..space.max_bins)
        .map(|k| {
            per_tau
                .iter()
                .map(|c| &c[k])
                .fold(None::<&OptimizedCycle>, |best, c| match best {
                    Some(b) if b.success >= c.success => Some(b),
                    _ => Some(c),
                })
                .cloned()
                .expect("at least one model")
        })
        .collect();
    let curves = per_tau
        .iter()
        .map(|c| TauCurve {
            tau_bin: c[0].tau_bin,
            success: c.iter().map(|x| x.success).collect(),
        })
        .collect();
    Ok(OptimizationResult { cycles, curves })
}

fn optimize_at(model: &dyn BinModel, base: &ProtocolConfig, space: &SearchSpace) -> Result<Vec<OptimizedCycle>> {
    let settings = model.settings().to_vec();
    let top = *settings.last().ok_or_else(|| Error::invalid("bin model has no pump settings"))?;
    let mut f_ev = space.evacuation_fidelities.clone();
    f_ev.push(base.fidelity_threshold);
    let mut sub = vec![0.0];
    let mut out: Vec<OptimizedCycle> = Vec::new();
    let mut prev: Option<ProtocolConfig> = None;
    for bins in 1..=space.max_bins {
        let mut cfg = base.clone();
        cfg.bins = bins;
        cfg.tau_bin = model.tau_bin();
        match &prev {
            None => {
                cfg.pump_samples = vec![(1, top)];
                cfg.release_settings = vec![0.5; bins];
                cfg.forced_evacuation = None;
                cfg.release_cap = *space.release_caps.last().unwrap_or(&base.release_cap);
                cfg.evacuation_fidelity = 0.0;
            }
            Some(p) => {
                cfg.release_cap = p.release_cap;
                cfg.evacuation_fidelity = p.evacuation_fidelity;
                cfg.forced_evacuation = p.forced_evacuation;
                cfg.release_settings = p.release_settings.clone();
                cfg.release_settings.push(*p.release_settings.last().unwrap_or(&0.5));
                cfg.pump_samples = resample(p, bins, cfg.forced_evacuation);
            }
        }
        let caps = pump_caps(&cfg, model)?;
        let score = |c: &ProtocolConfig| -> Result<f64> {
            Ok(evaluate_with_caps(c, model, &sub, &caps, false)?.success)
        };
        let mut best = score(&cfg)?;
        for _ in 0..space.passes {
            let before = best;
            // Pump samples.
            for i in 0..cfg.pump_samples.len() {
                let candidates: Vec<ProtocolConfig> = settings
                    .iter()
                    .map(|&s| {
                        let mut c = cfg.clone();
                        c.pump_samples[i].1 = s;
                        c
                    })
                    .collect();
                pick(&mut cfg, &mut best, candidates, &score)?;
            }
            let candidates = variants(&cfg, &f_ev, |c, &v| c.evacuation_fidelity = v);
            pick(&mut cfg, &mut best, candidates, &score)?;
            let candidates = variants(&cfg, &space.release_caps, |c, &v| c.release_cap = v);
            pick(&mut cfg, &mut best, candidates, &score)?;
            let forced: Vec<Option<usize>> = std::iter::once(None).chain((2..=bins).map(Some)).collect();
            let candidates = variants(&cfg, &forced, |c, &m| {
                c.pump_samples = resample(c, bins, m);
                c.forced_evacuation = m;
            });
            pick(&mut cfg, &mut best, candidates, &score)?;
            // Release retention, per bin that releases.
            let released = evaluate_with_caps(&cfg, model, &sub, &caps, false)?.release_bins;
            for b in released {
                let mut trial = cfg.clone();
                let mut failure = None;
                let (x, v) = golden_max(
                    |pc| {
                        trial.release_settings[b - 1] = pc;
                        match score(&trial) {
                            Ok(v) => v,
                            Err(e) => {
                                failure.get_or_insert(e);
                                f64::NEG_INFINITY
                            }
                        }
                    },
                    0.05,
                    0.95,
                    1e-3,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                if v > best {
                    best = v;
                    cfg.release_settings[b - 1] = x;
                }
            }
            if best <= before {
                break;
            }
        }
        let eval = evaluate_with_caps(&cfg, model, &sub, &caps, false)?;
        let carried = bins > 1 && sub[bins - 1] > eval.success;
        let success = eval.success.max(sub[bins - 1]);
        log::info!(
            "tau_bin {:.3e} s, M = {bins}: success {success:.6}{}",
            cfg.tau_bin,
            if carried { " (carried)" } else { "" }
        );
        sub.push(success);
        prev = Some(cfg.clone());
        out.push(OptimizedCycle {
            bins,
            tau_bin: cfg.tau_bin,
            success,
            config: cfg,
            carried,
            pump: eval.pump,
            discarded: eval.discarded,
            truncated: eval.truncated,
            accepted: eval.accepted,
        });
    }
    Ok(out)
}

/// Pump samples for `bins` bins placed per [`ProtocolConfig::sample_bins`],
/// valued from the schedule of `from`.
fn resample(from: &ProtocolConfig, bins: usize, forced_evacuation: Option<usize>) -> Vec<(usize, f64)> {
    ProtocolConfig::sample_bins(bins, forced_evacuation)
        .into_iter()
        .map(|b| (b, from.interpolated_pump(b.min(from.bins.max(1)))))
        .collect()
}

fn variants<T>(cfg: &ProtocolConfig, values: &[T], set: impl Fn(&mut ProtocolConfig, &T)) -> Vec<ProtocolConfig> {
    values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            set(&mut c, v);
            c
        })
        .collect()
}

/// Evaluate candidates in parallel and keep the first strict improvement maximum.
fn pick<S>(cfg: &mut ProtocolConfig, best: &mut f64, candidates: Vec<ProtocolConfig>, score: &S) -> Result<()>
where
    S: Fn(&ProtocolConfig) -> Result<f64> + Sync,
{
    let scores: Vec<f64> = candidates.par_iter().map(score).collect::<Result<_>>()?;
    for (c, s) in candidates.into_iter().zip(scores) {
        if s > *best + 1e-15 {
            *best = s;
            *cfg = c;
        }
    }
    Ok(())
}
