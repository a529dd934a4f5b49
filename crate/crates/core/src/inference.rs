//! Exact Bayesian bookkeeping of the stored signal number conditioned on the
//! detection record.
//!
//! A [`Belief`] holds joint masses `P(n, ℓ, x⃗)` for one observed record `x⃗`,
//! where `n` is the signal number at the end of the current bin and `ℓ` the
//! detection-number change between the decision time and the bin end, which
//! is revealed only together with the next decision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::BinOutcomeTable;
use crate::error::{Error, Result};
use crate::numeric::{binomial_coefficient, binomial_pmf, powi0};
use crate::protocol::ControlAction;

/// Branches lighter than this are dropped from the belief tree.
pub const PRUNE_THRESHOLD: f64 = 1e-9;

/// Joint masses below this are dropped from a belief as they are created.
pub const ENTRY_FLOOR: f64 = 1e-20;

/// Largest stored signal number carried into a pump bin.
pub const PUMP_SUPPORT: usize = 2;

/// `P(detected | emitted)` for independent detection with efficiency `eta`.
pub fn thin_detector(emitted: usize, detected: usize, eta: f64) -> f64 {
    if detected > emitted {
        return 0.0;
    }
    binomial_pmf(emitted, detected, eta)
}

/// `P(n_s emitted, n stay | n_prev)` with per-photon stay / emit probabilities.
pub fn release_multinomial(n_prev: usize, emitted: usize, stay: usize, p_c: f64, p_s: f64) -> f64 {
    if emitted + stay > n_prev || p_c < 0.0 || p_s < 0.0 {
        return 0.0;
    }
    let lost = n_prev - emitted - stay;
    let p_l = (1.0 - p_c - p_s).max(0.0);
    binomial_coefficient(n_prev, stay)
        * binomial_coefficient(n_prev - stay, emitted)
        * powi0(p_c, stay)
        * powi0(p_s, emitted)
        * powi0(p_l, lost)
}

/// Binomial survival of every photon over `dt` of intrinsic loss.
pub fn storage_update(dist: &[f64], dt: f64, kappa_loss: f64) -> Vec<f64> {
    let p_c = (-2.0 * kappa_loss * dt).exp();
    let mut out = vec![0.0; dist.len()];
    for (n, &w) in dist.iter().enumerate() {
        for (k, slot) in out.iter_mut().enumerate().take(n + 1) {
            *slot += w * binomial_pmf(n, k, p_c);
        }
    }
    out
}

/// `Σn(n−1)P / (ΣnP)²`; the distribution need not be normalised.
pub fn g2_of(dist: &[f64]) -> Result<f64> {
    let (mut total, mut mean, mut pairs) = (0.0, 0.0, 0.0);
    for (n, &p) in dist.iter().enumerate() {
        let n = n as f64;
        total += p;
        mean += n * p;
        pairs += n * (n - 1.0) * p;
    }
    if !(mean > 0.0) {
        return Err(Error::UndefinedG2);
    }
    Ok(pairs * total / (mean * mean))
}

/// Signal number suggested by the detection numbers at the decision time and
/// at the end of the previous bin.
pub fn estimate_state(x_decision: i64, x_previous: i64) -> i64 {
    if x_decision >= 0 {
        x_decision
    } else {
        x_decision - x_previous
    }
}

/// Detection numbers observed so far: at every bin end and every decision time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectionSequence {
    /// `x⁽⁰⁾ … x⁽ᵐ⁻¹⁾`, starting with `x⁽⁰⁾ = 0`.
    pub bin_ends: Vec<i64>,
    /// `x^{0*} … x^{m*}`, starting with `x^{0*} = 0`.
    pub decisions: Vec<i64>,
}

impl DetectionSequence {
    pub fn root() -> Self {
        Self {
            bin_ends: vec![0],
            decisions: vec![0],
        }
    }

    /// Current bin index `m`.
    pub fn bin(&self) -> usize {
        self.decisions.len() - 1
    }

    /// `x^{m*}`.
    pub fn decision(&self) -> i64 {
        *self.decisions.last().unwrap_or(&0)
    }

    pub fn previous(&self) -> i64 {
        *self.bin_ends.last().unwrap_or(&0)
    }

    pub fn estimate(&self) -> i64 {
        estimate_state(self.decision(), self.previous())
    }

    pub fn extend(&self, obs: Observation) -> Self {
        let mut next = self.clone();
        next.bin_ends.push(obs.bin_end);
        next.decisions.push(obs.decision);
        next
    }
}

/// What the next decision reveals: `x⁽ᵐ⁾` and `x^{(m+1)*}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation {
    pub bin_end: i64,
    pub decision: i64,
}

/// Joint masses over `(n, ℓ)` for a fixed record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub masses: BTreeMap<(usize, i64), f64>,
}

impl Belief {
    /// Certainty of `n` photons and no pending detections.
    pub fn certain(n: usize) -> Self {
        let mut masses = BTreeMap::new();
        masses.insert((n, 0), 1.0);
        Self { masses }
    }

    pub fn add(&mut self, n: usize, pending: i64, w: f64) {
        if w != 0.0 {
            *self.masses.entry((n, pending)).or_default() += w;
        }
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    /// `P(n, x⃗)` marginalised over pending detections.
    pub fn marginal(&self) -> Vec<f64> {
        let len = self.masses.keys().map(|k| k.0 + 1).max().unwrap_or(1);
        let mut out = vec![0.0; len];
        for (&(n, _), &w) in &self.masses {
            out[n] += w;
        }
        out
    }

    pub fn mass_of(&self, n: usize) -> f64 {
        self.marginal().get(n).copied().unwrap_or(0.0)
    }

    /// `P(n = estimate | x⃗)`.
    pub fn fidelity(&self, estimate: i64) -> f64 {
        let total = self.total();
        if estimate < 0 || total <= 0.0 {
            return 0.0;
        }
        self.mass_of(estimate as usize) / total
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            masses: self.masses.iter().map(|(&k, &w)| (k, w * factor)).collect(),
        }
    }
}

/// Children of a belief after one bin, keyed by what the next decision reveals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Update {
    pub children: BTreeMap<Observation, Belief>,
    /// Mass dropped because it lay outside the modelled support.
    pub truncated: f64,
    /// Mass of entries dropped below [`ENTRY_FLOOR`].
    pub negligible: f64,
}

impl Update {
    fn add(&mut self, obs: Observation, n: usize, pending: i64, w: f64) {
        if w < ENTRY_FLOOR {
            self.negligible += w;
            return;
        }
        self.children.entry(obs).or_default().add(n, pending, w);
    }

    pub fn total(&self) -> f64 {
        self.children.values().map(Belief::total).sum::<f64>()
    }
}

/// Pump bin: tables indexed by the initial signal number, `tables[n].initial == n`.
/// Mass with more than [`PUMP_SUPPORT`] stored photons is truncated.
pub fn pump_update(prior: &Belief, x_decision: i64, tables: &[&BinOutcomeTable], eta: f64) -> Result<Update> {
    let mut update = Update::default();
    let mut used = Vec::new();
    for (&(n_prev, pending), &w) in &prior.masses {
        if n_prev > PUMP_SUPPORT {
            update.truncated += w;
            continue;
        }
        let table = tables
            .get(n_prev)
            .filter(|t| t.initial == n_prev)
            .ok_or(Error::MissingInitialState(n_prev))?;
        used.push((table, pending, w));
    }
    let rows = || used.iter().flat_map(|(t, _, _)| t.counts.iter());
    let k_max = rows().map(|c| c.1.max(c.2)).max().unwrap_or(0);
    let ns_width = rows().map(|c| c.0).max().unwrap_or(0) + 1;
    let late_width = rows().map(|c| c.2).max().unwrap_or(0) + 1;
    let thin: Vec<Vec<f64>> = (0..=k_max)
        .map(|k| (0..=k).map(|i| thin_detector(k, i, eta)).collect())
        .collect();
    let mut grids: BTreeMap<Observation, Vec<f64>> = BTreeMap::new();
    for &(table, pending, w) in &used {
        let bin_end = x_decision + pending;
        for (ns, early, late, p) in table.entries() {
            for (i_early, &pe) in thin[early].iter().enumerate() {
                if pe == 0.0 {
                    continue;
                }
                let obs = Observation {
                    bin_end,
                    decision: bin_end + i_early as i64,
                };
                let grid = grids.entry(obs).or_insert_with(|| vec![0.0; ns_width * late_width]);
                let base = w * p * pe;
                for (i_late, &pl) in thin[late].iter().enumerate() {
                    grid[ns * late_width + i_late] += base * pl;
                }
            }
        }
    }
    for (obs, grid) in grids {
        for (i, &w) in grid.iter().enumerate() {
            update.add(obs, i / late_width, (i % late_width) as i64, w);
        }
    }
    if update.truncated > 0.0 {
        log::debug!("pump update truncated mass {:.3e} above n = {PUMP_SUPPORT}", update.truncated);
    }
    Ok(update)
}

/// Cumulative single-photon `(stay, emitted)` fractions of a release bin at
/// the decision time and at the bin end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseStages {
    pub early: (f64, f64),
    pub late: (f64, f64),
}

impl ReleaseStages {
    /// Pure intrinsic loss over a bin.
    pub fn storage(tau_bin: f64, decision_delay: f64, kappa_loss: f64) -> Self {
        let c = |t: f64| (-2.0 * kappa_loss * t).exp();
        Self {
            early: (c(tau_bin - decision_delay), 0.0),
            late: (c(tau_bin), 0.0),
        }
    }

    /// Stay / emit probabilities after the decision time, for a photon still
    /// stored at it.
    pub fn conditional_late(&self) -> (f64, f64) {
        let (c1, s1) = self.early;
        let (c2, s2) = self.late;
        if c1 <= 0.0 {
            return (0.0, 0.0);
        }
        ((c2 / c1).min(1.0), ((s2 - s1) / c1).max(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(c, s): (f64, f64)| c >= 0.0 && s >= 0.0 && c + s <= 1.0 + 1e-12;
        if !ok(self.early) || !ok(self.late) || self.late.0 > self.early.0 * (1.0 + 1e-12) {
            return Err(Error::invalid(format!("inconsistent release fractions {self:?}")));
        }
        Ok(())
    }
}

/// `(stay, detected, probability)` for each photon number up to `n_max`.
/// Missed emissions are indistinguishable from loss, so thinning the emitted
/// count by `eta` leaves a multinomial with emit probability `eta · p_s`.
fn stage_transitions(n_max: usize, p_c: f64, p_s: f64, eta: f64) -> Vec<Vec<(usize, usize, f64)>> {
    (0..=n_max)
        .map(|n| {
            let mut row = Vec::new();
            for stay in 0..=n {
                for det in 0..=(n - stay) {
                    let p = release_multinomial(n, det, stay, p_c, eta * p_s);
                    if p != 0.0 {
                        row.push((stay, det, p));
                    }
                }
            }
            row
        })
        .collect()
}

/// Release (or storage) bin: two multinomial stages split at the decision
/// time, with signal detections lowering the detection number.
pub fn release_update(prior: &Belief, x_decision: i64, stages: &ReleaseStages, eta: f64) -> Result<Update> {
    stages.validate()?;
    let (c1, s1) = stages.early;
    let (c2, s2) = stages.conditional_late();
    let n_max = prior.masses.keys().map(|k| k.0).max().unwrap_or(0);
    let first = stage_transitions(n_max, c1, s1, eta);
    let second = stage_transitions(n_max, c2, s2, eta);
    let width = n_max + 1;
    let mut mid: BTreeMap<Observation, Vec<f64>> = BTreeMap::new();
    for (&(n_prev, pending), &w) in &prior.masses {
        let bin_end = x_decision + pending;
        for &(n_mid, det1, p1) in &first[n_prev] {
            let obs = Observation {
                bin_end,
                decision: bin_end - det1 as i64,
            };
            mid.entry(obs).or_insert_with(|| vec![0.0; width])[n_mid] += w * p1;
        }
    }
    let mut update = Update::default();
    let mut end = vec![0.0; width * width];
    for (obs, weights) in mid {
        end.fill(0.0);
        for (n_mid, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(n_end, det2, p2) in &second[n_mid] {
                end[n_end * width + det2] += w * p2;
            }
        }
        for (i, &w) in end.iter().enumerate() {
            update.add(obs, i / width, -((i % width) as i64), w);
        }
    }
    Ok(update)
}

/// Whether a belief passes the acceptance thresholds, with its figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceVerdict {
    pub fidelity: f64,
    pub g2: Option<f64>,
    pub accepted: bool,
}

impl AcceptanceVerdict {
    pub fn judge(dist: &[f64], fidelity_threshold: f64, g2_threshold: f64) -> Self {
        let total: f64 = dist.iter().sum();
        let fidelity = if total > 0.0 {
            dist.get(1).copied().unwrap_or(0.0) / total
        } else {
            0.0
        };
        let g2 = g2_of(dist).ok();
        let accepted = fidelity >= fidelity_threshold && g2.is_some_and(|g| g <= g2_threshold);
        Self { fidelity, g2, accepted }
    }
}

/// Node of the belief tree.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefNode {
    pub sequence: DetectionSequence,
    pub belief: Belief,
    pub action: Option<ControlAction>,
    pub children: Vec<BeliefNode>,
}

impl BeliefNode {
    pub fn root() -> Self {
        Self {
            sequence: DetectionSequence::root(),
            belief: Belief::certain(0),
            action: None,
            children: Vec::new(),
        }
    }

    pub fn leaves(&self) -> Vec<&BeliefNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if node.children.is_empty() {
                out.push(node);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Indented text dump, one node per line: record, action, masses by `n`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_text(0, &mut out);
        out
    }

    fn write_text(&self, depth: usize, out: &mut String) {
        let join = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(",");
        let action = self.action.map_or_else(|| "-".to_string(), |a| a.to_string());
        let masses: Vec<String> = self
            .belief
            .marginal()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(n, w)| format!("{n}:{w:.12e}"))
            .collect();
        let _ = writeln!(
            out,
            "{:indent$}ends=[{}] decisions=[{}] action={} masses={{{}}}",
            "",
            join(&self.sequence.bin_ends),
            join(&self.sequence.decisions),
            action,
            masses.join(" "),
            indent = 2 * depth
        );
        for child in &self.children {
            child.write_text(depth + 1, out);
        }
    }
}

/// `Σ P(n = 1, x⃗)` over leaves whose conditional state passes both thresholds.
pub fn success_probability(tree: &BeliefNode, fidelity_threshold: f64, g2_threshold: f64) -> f64 {
    tree.leaves()
        .iter()
        .map(|leaf| {
            let dist = leaf.belief.marginal();
            if AcceptanceVerdict::judge(&dist, fidelity_threshold, g2_threshold).accepted {
                dist.get(1).copied().unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .sum()
}
