mod common;

use common::*;
use lemsim::cli::parse_scenario;
use lemsim::cosim::{
    compute_metrics, generate_synthetic_bids, run, run_with, HaltKind, RunOptions, Scenario, ScenarioError,
};

fn two_bus_scenario() -> Scenario {
    parse_scenario(&scenario_path("two_bus.toml")).unwrap()
}

#[test]
fn two_bus_counts_and_cadence() {
    let s = two_bus_scenario();
    let log = run(&s).unwrap();
    assert!(log.completed());
    assert_eq!(log.pm.len(), 2);
    assert_eq!(log.sm.len(), 10);
    let times: Vec<u32> = log.pm.iter().map(|r| r.time).collect();
    assert_eq!(times, vec![0, 5]);
    for (k, r) in log.sm.iter().enumerate() {
        assert_eq!(r.time, k as u32);
        assert_eq!(r.pm_index, k / 5);
        assert!(r.balance_error < 1e-8);
    }
}

#[test]
fn zero_flexibility_reproduces_the_baseline() {
    let mut s = two_bus_scenario();
    s.flexibility_range = (0.0, 0.0);
    let log = run(&s).unwrap();
    assert!(log.completed());
    let bids = generate_synthetic_bids(&s).unwrap();
    for r in &log.sm {
        for (sched, bid) in r.result.schedules.iter().zip(&bids[r.step]) {
            let (a, b) = (&sched.phases[0], &bid.phases[0]);
            assert!((a.p - b.p0).abs() < 1e-9 && (a.q - b.q0).abs() < 1e-9);
            assert!(a.delta_p.abs() < 1e-12 && a.delta_q.abs() < 1e-12);
        }
    }
    // With nothing to trade, the market's power flow is the no-market one.
    for r in &log.pm {
        let (real, base) = (r.realized.as_ref().unwrap(), r.no_lem.as_ref().unwrap());
        for (a, b) in real.v.iter().zip(&base.v) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}

#[test]
fn unloaded_feeder_sits_at_nominal_voltage() {
    let mut s = two_bus_scenario();
    s.profiles.insert("flat".into(), vec![0.0]);
    let log = run(&s).unwrap();
    let m = compute_metrics(&log, &s);
    assert!(m.mean_dev_lem < 1e-6, "{}", m.mean_dev_lem);
    assert!(m.mean_dev_no_lem.unwrap() < 1e-9);
}

#[test]
fn cadence_must_divide() {
    let mut s = two_bus_scenario();
    s.market.dt_s = 2;
    s.market.dt_p = 7;
    assert_eq!(s.validate(), Err(ScenarioError::Cadence { dt_s: 2, dt_p: 7 }));
    assert!(matches!(run(&s), Err(ScenarioError::Cadence { .. })));
    s.market.dt_p = 6;
    s.market.horizon = 10;
    assert!(matches!(run(&s), Err(ScenarioError::Horizon { .. })));
}

#[test]
fn fixed_seed_is_deterministic() {
    let s = two_bus_scenario();
    assert_eq!(run(&s).unwrap(), run(&s).unwrap());
    let mut other = s.clone();
    other.market.seed = s.market.seed + 1;
    assert_ne!(generate_synthetic_bids(&s).unwrap(), generate_synthetic_bids(&other).unwrap());
}

#[test]
fn skipping_the_baseline_leaves_it_empty() {
    let s = two_bus_scenario();
    let log = run_with(&s, RunOptions { no_lem_baseline: false }).unwrap();
    assert!(log.pm.iter().all(|r| r.no_lem.is_none()));
    let m = compute_metrics(&log, &s);
    assert!(m.mean_dev_no_lem.is_none());
}

#[test]
fn overloaded_interval_halts_with_partial_log() {
    let mut s = two_bus_scenario();
    // Demand beyond the line rating in the second interval.
    s.profiles.insert("flat".into(), vec![1.0, 1.0, 1.0, 1.0, 1.0, 40.0, 40.0, 40.0, 40.0, 40.0]);
    let log = run(&s).unwrap();
    let h = log.halt.as_ref().expect("run should halt");
    assert_eq!(h.kind, HaltKind::Primary, "{h:?}");
    assert_eq!(h.time, 5);
    assert_eq!(log.pm.len(), 1);
    assert_eq!(log.sm.len(), 5);
}

#[test]
fn four_bus_market_regulates_voltage() {
    let s = parse_scenario(&scenario_path("four_bus.toml")).unwrap();
    let log = run(&s).unwrap();
    assert!(log.completed());
    assert_eq!((log.pm.len(), log.sm.len()), (12, 180));
    let m = compute_metrics(&log, &s);
    assert!(m.mean_dev_lem <= m.mean_dev_no_lem.unwrap());
    assert!(m.max_balance_error < 1e-8);
    // All three SMOs clear.
    let smos: std::collections::BTreeSet<&str> = log.sm.iter().map(|r| r.smo.as_str()).collect();
    assert_eq!(smos.len(), 3);
}
