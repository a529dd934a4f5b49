mod common;

use common::{oracle_success, sub_config, toy_config, ToyModel};
use muxsource::inference::{Belief, DetectionSequence};
use muxsource::protocol::*;

fn folded(config: &ProtocolConfig, model: &dyn BinModel) -> f64 {
    let mut sub = vec![0.0];
    for k in 1..config.bins {
        sub.push(evaluate_protocol(&sub_config(config, k), model, &sub, false).unwrap().success);
    }
    evaluate_protocol(config, model, &sub, false).unwrap().success
}

#[test]
fn three_bins_match_enumeration_with_restarts() {
    let model = ToyModel::new(1e-9);
    for forced in [None, Some(2)] {
        for f_ev in [0.0, 0.5, 0.95] {
            let config = ProtocolConfig {
                forced_evacuation: forced,
                evacuation_fidelity: f_ev,
                ..toy_config(3)
            };
            let direct = oracle_success(&config, &model);
            let via_recursion = folded(&config, &model);
            assert!(direct > 0.0);
            assert!((direct - via_recursion).abs() < 1e-12, "{forced:?} {f_ev}: {direct} vs {via_recursion}");
        }
    }
}

#[test]
fn toy_exercises_every_action() {
    let model = ToyModel::new(1e-9);
    let config = ProtocolConfig {
        evacuation_fidelity: 0.95,
        ..toy_config(3)
    };
    let eval = evaluate_protocol(&config, &model, &[0.0, 0.1, 0.2], true).unwrap();
    let text = eval.tree.unwrap().to_text();
    for a in ["pump", "release", "store", "evacuate"] {
        assert!(text.contains(&format!("action={a}")), "{a} missing:\n{text}");
    }
}

#[test]
fn impossible_threshold_gives_zero() {
    let model = ToyModel::new(1e-9);
    let config = ProtocolConfig {
        fidelity_threshold: 1.0,
        ..toy_config(3)
    };
    assert_eq!(folded(&config, &model), 0.0);
}

#[test]
fn decision_examples() {
    let model = ToyModel::new(1e-9);
    let config = toy_config(4);
    let seq = |ends: Vec<i64>, decision| DetectionSequence {
        bin_ends: ends,
        decisions: vec![0, decision],
    };
    let mut heralded = Belief::default();
    heralded.add(1, 0, 0.3);
    heralded.add(2, 0, 0.01);
    assert_eq!(decide_action(&heralded, &seq(vec![0, 0], 1), &config, &model).unwrap(), ControlAction::Store);
    let mut pair = Belief::default();
    pair.add(2, 0, 0.05);
    pair.add(3, 0, 0.001);
    assert_eq!(
        decide_action(&pair, &seq(vec![0, 0], 2), &config, &model).unwrap(),
        ControlAction::Release { retention: 0.4 }
    );
    let mut many = Belief::default();
    many.add(5, 0, 0.01);
    assert_eq!(decide_action(&many, &seq(vec![0, 0], 5), &config, &model).unwrap(), ControlAction::Evacuate);
    let forced = ProtocolConfig {
        forced_evacuation: Some(2),
        ..config.clone()
    };
    assert_eq!(decide_action(&heralded, &seq(vec![0, 0], 1), &forced, &model).unwrap(), ControlAction::Evacuate);
    let mut negative = Belief::default();
    negative.add(0, 0, 0.01);
    assert!(matches!(
        decide_action(&negative, &seq(vec![0, 0], -1), &config, &model).unwrap(),
        ControlAction::Pump { .. }
    ));
}

#[test]
fn perfect_lossless_stores_with_unit_fidelity() {
    // Remove the dark and late rows so that x* = 1 identifies one photon exactly.
    let mut clean = ToyModel::new(1e-9);
    for per_setting in &mut clean.tables {
        for t in per_setting.iter_mut() {
            t.counts.retain(|&(n, e, l, _)| l == 0 && n == t.initial + e);
            t.n_traj = t.total();
        }
    }
    let config = ProtocolConfig {
        efficiency: 1.0,
        kappa_loss: 0.0,
        decision_delay: 0.0,
        release_cap: 2,
        ..toy_config(3)
    };
    let eval = evaluate_protocol(&config, &clean, &[0.0, 0.0, 0.0], true).unwrap();
    for rec in &eval.accepted {
        assert_eq!(rec.fidelity, 1.0);
    }
    assert!(eval.success > 0.0);
}

#[test]
fn disabling_release_never_helps_the_toy() {
    let model = ToyModel::new(1e-9);
    for bins in 1..=4 {
        let with = folded(&toy_config(bins), &model);
        let without = folded(
            &ProtocolConfig {
                release_cap: 2,
                ..toy_config(bins)
            },
            &model,
        );
        assert!(without <= with + 1e-15, "M={bins}: {without} > {with}");
    }
}

#[test]
fn optimiser_output_is_monotone() {
    let model = ToyModel::new(1e-9);
    let base = toy_config(1);
    let space = SearchSpace::standard(4, 3);
    let res = optimize(&[&model], &base, &space).unwrap();
    assert_eq!(res.cycles.len(), 4);
    assert!(res.cycles.windows(2).all(|w| w[1].success >= w[0].success));
    for c in &res.cycles {
        for rec in &c.accepted {
            assert!(rec.fidelity >= base.fidelity_threshold && rec.g2 <= base.g2_threshold);
        }
    }
}

#[test]
fn single_bin_optimum_takes_the_largest_admissible_pump() {
    let model = ToyModel::new(1e-9);
    let res = optimize(&[&model], &toy_config(1), &SearchSpace::standard(1, 3)).unwrap();
    let caps = pump_caps(&toy_config(1), &model).unwrap();
    assert_eq!(res.cycles[0].pump, caps);
    let direct = evaluate_protocol(&res.cycles[0].config, &model, &[0.0], false).unwrap();
    assert!((res.cycles[0].success - direct.success).abs() < 1e-15);
}

#[test]
fn combiner_inverse_is_minimal() {
    for p in [0.1, 0.35, 0.684 + 1e-9, 0.7, 0.784, 0.95] {
        let n = modes_required(p, 0.99).unwrap();
        assert!(frequency_multiplex_combine(p, n).unwrap() >= 0.99);
        if n > 1 {
            assert!(frequency_multiplex_combine(p, n - 1).unwrap() < 0.99);
        }
    }
}
