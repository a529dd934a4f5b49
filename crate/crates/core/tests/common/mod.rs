#![allow(dead_code)]

use std::collections::BTreeMap;

use muxsource::dynamics::BinOutcomeTable;
use muxsource::inference::{Belief, DetectionSequence, ReleaseStages, PRUNE_THRESHOLD, PUMP_SUPPORT};
use muxsource::protocol::{decide_action, BinModel, ControlAction, ProtocolConfig};
use muxsource::Result;

/// Table from `(n_s, k_early, k_late, count)` rows out of `total` trajectories.
pub fn table(setting: f64, initial: usize, tau_bin: f64, rows: &[(usize, usize, usize, u64)], total: u64) -> BinOutcomeTable {
    let mut counts = rows.to_vec();
    counts.sort();
    BinOutcomeTable {
        setting,
        initial,
        tau_bin,
        decision_time: tau_bin,
        n_traj: total,
        cutoff: 8,
        counts,
        residual_idler: 0.0,
        top_shell: 0.0,
    }
}

/// Hand-built bin model: two pump settings, release fractions in closed form.
pub struct ToyModel {
    pub tau_bin: f64,
    pub settings: Vec<f64>,
    pub tables: Vec<Vec<BinOutcomeTable>>,
}

impl ToyModel {
    pub fn new(tau_bin: f64) -> Self {
        let weak = [(0, 0, 0, 70), (1, 1, 0, 20), (1, 0, 1, 3), (2, 2, 0, 4), (2, 1, 1, 2), (1, 0, 0, 1)];
        let strong = [(0, 0, 0, 50), (1, 1, 0, 30), (1, 0, 1, 6), (2, 2, 0, 8), (2, 1, 1, 4), (1, 0, 0, 2)];
        let shifted = |rows: &[(usize, usize, usize, u64)], n0: usize| -> Vec<(usize, usize, usize, u64)> {
            rows.iter().map(|&(n, a, b, c)| (n + n0, a, b, c)).collect()
        };
        let settings = vec![0.1, 0.3];
        let tables = [&weak[..], &strong[..]]
            .iter()
            .zip(&settings)
            .map(|(rows, &s)| (0..=2).map(|n0| table(s, n0, tau_bin, &shifted(rows, n0), 100)).collect())
            .collect();
        Self {
            tau_bin,
            settings,
            tables,
        }
    }
}

impl BinModel for ToyModel {
    fn tau_bin(&self) -> f64 {
        self.tau_bin
    }

    fn settings(&self) -> &[f64] {
        &self.settings
    }

    fn tables(&self, setting: f64) -> Result<Vec<&BinOutcomeTable>> {
        let i = self.settings.iter().position(|&s| s == setting).expect("toy setting");
        Ok(self.tables[i].iter().collect())
    }

    fn release_stages(&self, retention: f64) -> Result<ReleaseStages> {
        let rest = 1.0 - retention;
        Ok(ReleaseStages {
            early: (retention + 0.02 * rest, 0.97 * rest),
            late: (retention, 0.99 * rest),
        })
    }
}

/// Every detected/missed pattern of `k` photons, one photon at a time.
pub fn detection_patterns(k: usize, eta: f64) -> Vec<(usize, f64)> {
    let mut out = vec![(0usize, 1.0f64)];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|(d, p)| [(d + 1, p * eta), (d, p * (1.0 - eta))])
            .collect();
    }
    out
}

/// Every fate of `n` stored photons over a bin split at the decision time:
/// `(stored at end, detected before split, detected after split, probability)`.
pub fn photon_fates(n: usize, stages: &ReleaseStages, eta: f64) -> Vec<(usize, usize, usize, f64)> {
    let (c1, s1) = stages.early;
    let (c2, s2) = stages.late;
    let (l1, stay, emit, lose) = if c1 > 0.0 {
        (1.0 - c1 - s1, c2 / c1, (s2 - s1) / c1, 1.0 - c2 / c1 - (s2 - s1) / c1)
    } else {
        (1.0 - s1, 0.0, 0.0, 0.0)
    };
    let single = [
        (1, 0, 0, c1 * stay),
        (0, 0, 1, c1 * emit * eta),
        (0, 0, 0, c1 * emit * (1.0 - eta)),
        (0, 0, 0, c1 * lose),
        (0, 1, 0, s1 * eta),
        (0, 0, 0, s1 * (1.0 - eta)),
        (0, 0, 0, l1),
    ];
    let mut out = vec![(0usize, 0usize, 0usize, 1.0f64)];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|(a, b, c, p)| single.iter().map(move |&(x, y, z, q)| (a + x, b + y, c + z, p * q)))
            .collect();
    }
    out
}

#[derive(Debug, Clone)]
pub struct History {
    pub mass: f64,
    pub n: usize,
    pub pending: i64,
    pub ends: Vec<i64>,
    pub decisions: Vec<i64>,
    pub cycle_start: usize,
}

/// Config of a fresh cycle with `bins` bins carved out of `config`.
pub fn sub_config(config: &ProtocolConfig, bins: usize) -> ProtocolConfig {
    let mut c = config.clone();
    c.bins = bins;
    c.release_settings.truncate(bins);
    if c.forced_evacuation.is_some_and(|m| m > bins) {
        c.forced_evacuation = None;
    }
    c
}

fn independent_g2(dist: &[f64]) -> Option<f64> {
    let total: f64 = dist.iter().sum();
    let mean: f64 = dist.iter().enumerate().map(|(n, p)| n as f64 * p / total).sum();
    let second: f64 = dist.iter().enumerate().map(|(n, p)| (n * n.saturating_sub(1)) as f64 * p / total).sum();
    (mean > 0.0).then(|| second / (mean * mean))
}

/// Success probability by enumerating every microscopic history photon by
/// photon. Evacuated branches restart a fresh cycle in the same timeline.
pub fn oracle_success(config: &ProtocolConfig, model: &dyn BinModel) -> f64 {
    let total_bins = config.bins;
    let mut frontier = vec![History {
        mass: 1.0,
        n: 0,
        pending: 0,
        ends: vec![0],
        decisions: vec![0],
        cycle_start: 0,
    }];
    let mut success = 0.0;
    for m in 0..=total_bins {
        let mut groups: BTreeMap<(usize, Vec<i64>, Vec<i64>), Vec<History>> = BTreeMap::new();
        for h in frontier.drain(..) {
            groups.entry((h.cycle_start, h.ends.clone(), h.decisions.clone())).or_default().push(h);
        }
        let mut next = Vec::new();
        for ((start, ends, decisions), hs) in groups {
            let decision = *decisions.last().unwrap();
            let mut belief = Belief::default();
            for h in &hs {
                belief.add(h.n, h.pending, h.mass);
            }
            let total = belief.total();
            if m > start && total < PRUNE_THRESHOLD {
                continue;
            }
            let cfg = sub_config(config, total_bins - start);
            if m == total_bins {
                let dist = belief.marginal();
                let fid = dist.get(1).copied().unwrap_or(0.0) / total;
                if fid >= cfg.fidelity_threshold && independent_g2(&dist).is_some_and(|g| g <= cfg.g2_threshold) {
                    success += dist[1];
                }
                continue;
            }
            let seq = DetectionSequence {
                bin_ends: ends.clone(),
                decisions: decisions.clone(),
            };
            let action = decide_action(&belief, &seq, &cfg, model).expect("decision");
            let fates = |h: &History, stages: &ReleaseStages, next: &mut Vec<History>| {
                let bin_end = decision + h.pending;
                for (stay, de, dl, p) in photon_fates(h.n, stages, cfg.efficiency) {
                    let mut e = ends.clone();
                    e.push(bin_end);
                    let mut d = decisions.clone();
                    d.push(bin_end - de as i64);
                    next.push(History {
                        mass: h.mass * p,
                        n: stay,
                        pending: -(dl as i64),
                        ends: e,
                        decisions: d,
                        cycle_start: start,
                    });
                }
            };
            match action {
                ControlAction::Evacuate => {
                    if m + 1 < total_bins {
                        next.push(History {
                            mass: total,
                            n: 0,
                            pending: 0,
                            ends: vec![0],
                            decisions: vec![0],
                            cycle_start: m + 1,
                        });
                    }
                }
                ControlAction::Pump { setting } => {
                    let tables = model.tables(setting).unwrap();
                    for h in hs.iter().filter(|h| h.n <= PUMP_SUPPORT) {
                        let bin_end = decision + h.pending;
                        for (ns, ke, kl, p) in tables[h.n].entries() {
                            for (de, pe) in detection_patterns(ke, cfg.efficiency) {
                                for (dl, pl) in detection_patterns(kl, cfg.efficiency) {
                                    let mut e = ends.clone();
                                    e.push(bin_end);
                                    let mut d = decisions.clone();
                                    d.push(bin_end + de as i64);
                                    next.push(History {
                                        mass: h.mass * p * pe * pl,
                                        n: ns,
                                        pending: dl as i64,
                                        ends: e,
                                        decisions: d,
                                        cycle_start: start,
                                    });
                                }
                            }
                        }
                    }
                }
                ControlAction::Release { retention } => {
                    let stages = model.release_stages(retention).unwrap();
                    hs.iter().for_each(|h| fates(h, &stages, &mut next));
                }
                ControlAction::Store => {
                    let keep = |t: f64| (-2.0 * cfg.kappa_loss * t).exp();
                    let stages = ReleaseStages {
                        early: (keep(cfg.tau_bin - cfg.decision_delay), 0.0),
                        late: (keep(cfg.tau_bin), 0.0),
                    };
                    hs.iter().for_each(|h| fates(h, &stages, &mut next));
                }
            }
        }
        frontier = next.into_iter().filter(|h| h.mass != 0.0).collect();
    }
    success
}

/// Protocol settings exercised against the toy model.
pub fn toy_config(bins: usize) -> ProtocolConfig {
    ProtocolConfig {
        bins,
        tau_bin: 1e-9,
        decision_delay: 1e-10,
        efficiency: 0.9,
        fidelity_threshold: 0.8,
        g2_threshold: 0.3,
        release_cap: 3,
        evacuation_fidelity: 0.5,
        forced_evacuation: None,
        pump_samples: vec![(1, 0.3), (bins, 0.1)],
        release_settings: vec![0.4; bins],
        kappa_loss: 1e7,
    }
}
