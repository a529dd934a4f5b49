mod common;

use std::collections::BTreeMap;

use common::{detection_patterns, photon_fates, table, ToyModel};
use muxsource::inference::*;
use muxsource::protocol::{evaluate_protocol, BinModel, ProtocolConfig};
use proptest::prelude::*;

/// Fate-by-fate posterior of a pump bin: `(x_end, x_decision, n, pending) → mass`.
fn pump_oracle(prior: &[(usize, i64, f64)], x: i64, model: &ToyModel, setting: f64, eta: f64) -> BTreeMap<(i64, i64, usize, i64), f64> {
    let tables = model.tables(setting).unwrap();
    let mut out = BTreeMap::new();
    for &(n0, pending, w) in prior {
        let end = x + pending;
        for (ns, ke, kl, p) in tables[n0].entries() {
            for (de, pe) in detection_patterns(ke, eta) {
                for (dl, pl) in detection_patterns(kl, eta) {
                    *out.entry((end, end + de as i64, ns, dl as i64)).or_insert(0.0) += w * p * pe * pl;
                }
            }
        }
    }
    out
}

fn flatten(update: &Update) -> BTreeMap<(i64, i64, usize, i64), f64> {
    let mut out = BTreeMap::new();
    for (obs, b) in &update.children {
        for (&(n, l), &w) in &b.masses {
            out.insert((obs.bin_end, obs.decision, n, l), w);
        }
    }
    out
}

fn assert_same(a: &BTreeMap<(i64, i64, usize, i64), f64>, b: &BTreeMap<(i64, i64, usize, i64), f64>) {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    for k in keys {
        let (x, y) = (a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0));
        assert!((x - y).abs() < 1e-12, "{k:?}: {x} vs {y}");
    }
}

fn prior_belief(prior: &[(usize, i64, f64)]) -> Belief {
    let mut b = Belief::default();
    for &(n, l, w) in prior {
        b.add(n, l, w);
    }
    b
}

#[test]
fn empty_pump_leaves_vacuum_and_record() {
    let t = table(0.0, 0, 1e-9, &[(0, 0, 0, 10)], 10);
    let up = pump_update(&Belief::certain(0), 3, &[&t], 0.7).unwrap();
    assert_eq!(up.children.len(), 1);
    let (obs, b) = up.children.iter().next().unwrap();
    assert_eq!((obs.bin_end, obs.decision), (3, 3));
    assert_eq!(b.marginal(), vec![1.0]);
}

#[test]
fn perfect_detector_counts_every_idler() {
    let model = ToyModel::new(1e-9);
    let up = pump_update(&Belief::certain(0), 0, &model.tables(0.3).unwrap(), 1.0).unwrap();
    for (obs, b) in &up.children {
        for (&(n, late), _) in &b.masses {
            // Toy rows satisfy n = early + late except the dark row (1, 0, 0).
            let counted = obs.decision + late;
            assert!(counted == n as i64 || (n == 1 && counted == 0), "{obs:?} n={n} late={late}");
        }
    }
}

#[test]
fn pump_update_matches_fate_enumeration() {
    let model = ToyModel::new(1e-9);
    let prior = [(0, 0, 0.5), (1, 0, 0.2), (1, 1, 0.1), (2, 0, 0.15), (3, 0, 0.05)];
    let up = pump_update(&prior_belief(&prior), 1, &model.tables(0.3).unwrap(), 0.83).unwrap();
    let oracle = pump_oracle(&prior[..4], 1, &model, 0.3, 0.83);
    assert_same(&flatten(&up), &oracle);
    assert!((up.truncated - 0.05).abs() < 1e-15);
}

#[test]
fn pump_update_rejects_missing_initial_state() {
    let model = ToyModel::new(1e-9);
    let tables = model.tables(0.1).unwrap();
    let err = pump_update(&Belief::certain(2), 0, &tables[..2], 0.9).unwrap_err();
    assert!(matches!(err, muxsource::Error::MissingInitialState(2)));
}

#[test]
fn release_update_matches_fate_enumeration() {
    let stages = ReleaseStages {
        early: (0.55, 0.3),
        late: (0.35, 0.45),
    };
    for n in 0usize..=3 {
        for eta in [1.0, 0.77] {
            let prior = [(n, 0, 0.6), (n.saturating_sub(1), -1, 0.4)];
            let up = release_update(&prior_belief(&prior), 2, &stages, eta).unwrap();
            let mut oracle = BTreeMap::new();
            for &(n0, pending, w) in &prior {
                let end = 2 + pending;
                for (stay, de, dl, p) in photon_fates(n0, &stages, eta) {
                    *oracle.entry((end, end - de as i64, stay, -(dl as i64))).or_insert(0.0) += w * p;
                }
            }
            oracle.retain(|_, v| *v != 0.0);
            assert_same(&flatten(&up), &oracle);
        }
    }
}

#[test]
fn storage_bin_is_release_without_emission() {
    let dist = [0.2, 0.5, 0.3];
    let mut belief = Belief::default();
    for (n, &w) in dist.iter().enumerate() {
        belief.add(n, 0, w);
    }
    let stages = ReleaseStages::storage(1e-9, 1e-10, 2e7);
    let up = release_update(&belief, 1, &stages, 0.9).unwrap();
    assert_eq!(up.children.len(), 1);
    let b = up.children.values().next().unwrap();
    let direct = storage_update(&dist, 1e-9, 2e7);
    for (n, &w) in direct.iter().enumerate() {
        assert!((b.mass_of(n) - w).abs() < 1e-15);
    }
}

#[test]
fn truncated_poisson_has_unit_g2() {
    let lambda: f64 = 0.1;
    let dist: Vec<f64> = (0..=6)
        .map(|n| (-lambda).exp() * lambda.powi(n) / (1..=n).map(f64::from).product::<f64>())
        .collect();
    assert!((g2_of(&dist).unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn success_is_zero_when_every_leaf_fails() {
    let model = ToyModel::new(1e-9);
    let mut config = common::toy_config(2);
    config.fidelity_threshold = 1.0;
    let eval = evaluate_protocol(&config, &model, &[0.0, 0.0], true).unwrap();
    let tree = eval.tree.unwrap();
    assert_eq!(success_probability(&tree, 1.0, 0.3), 0.0);
    assert_eq!(eval.success, 0.0);
}

#[test]
fn tree_is_normalised_and_leaf_success_agrees() {
    let model = ToyModel::new(1e-9);
    let config = common::toy_config(3);
    let sub: Vec<f64> = (0..3)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                common::oracle_success(&common::sub_config(&config, k), &model)
            }
        })
        .collect();
    let eval = evaluate_protocol(&config, &model, &sub, true).unwrap();
    let tree = eval.tree.as_ref().unwrap();
    let leaves: f64 = tree.leaves().iter().map(|l| l.belief.total()).sum();
    assert!((leaves + eval.discarded + eval.truncated - 1.0).abs() < 1e-12);
    let final_leaves = success_probability(tree, config.fidelity_threshold, config.g2_threshold);
    assert!((final_leaves + eval.from_restarts - eval.success).abs() < 1e-12);
    for rec in &eval.accepted {
        assert!((rec.success / rec.probability - rec.fidelity).abs() < 1e-12);
    }
}

#[test]
fn tree_text_is_deterministic() {
    let model = ToyModel::new(1e-9);
    let config = common::toy_config(1);
    let a = evaluate_protocol(&config, &model, &[0.0], true).unwrap().tree.unwrap().to_text();
    let b = evaluate_protocol(&config, &model, &[0.0], true).unwrap().tree.unwrap().to_text();
    assert_eq!(a, b);
    assert!(a.starts_with("ends=[0] decisions=[0] action=pump(0.3) masses={0:1.000000000000e0}\n"), "{a}");
    assert!(a.lines().skip(1).all(|l| l.starts_with("  ends=[0,0] decisions=[0,")));
}

#[test]
fn single_bin_perfect_lossless() {
    let model = ToyModel::new(1e-9);
    let config = ProtocolConfig {
        efficiency: 1.0,
        kappa_loss: 0.0,
        g2_threshold: 1.0,
        ..common::toy_config(1)
    };
    let eval = evaluate_protocol(&config, &model, &[0.0], false).unwrap();
    // Heralds with x* = 1: rows (1, 1, 0) and (2, 1, 1); only the first is single.
    let fid = 30.0 / 34.0;
    assert!(fid >= config.fidelity_threshold);
    assert!((eval.success - 0.30).abs() < 1e-12);
}

proptest! {
    #[test]
    fn thinning_is_normalised(n in 0usize..12, eta in 0.0f64..=1.0) {
        let s: f64 = (0..=n).map(|i| thin_detector(n, i, eta)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn release_multinomial_is_normalised(n in 0usize..8, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (p_c, p_s) = (a * (1.0 - b), b * (1.0 - a));
        let s: f64 = (0..=n).flat_map(|k| (0..=n - k).map(move |e| (k, e)))
            .map(|(k, e)| release_multinomial(n, e, k, p_c, p_s)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratios_ignore_scale(w in proptest::collection::vec(0.0f64..1.0, 2..6), k in 1e-6f64..1e6) {
        prop_assume!(w[1..].iter().sum::<f64>() > 1e-6);
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        prop_assert!((g2_of(&w).unwrap() - g2_of(&scaled).unwrap()).abs() < 1e-9);
        let a = AcceptanceVerdict::judge(&w, 0.5, 1.0);
        let b = AcceptanceVerdict::judge(&scaled, 0.5, 1.0);
        prop_assert!((a.fidelity - b.fidelity).abs() < 1e-12);
    }
}
