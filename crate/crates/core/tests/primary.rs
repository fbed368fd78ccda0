mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use common::*;
use lemsim::network::{Phase, ThreePhaseNetwork};
use lemsim::powerflow::power_flow_oracle;
use lemsim::primary::{
    assemble_ciopf, extract_dlmp, preprocess_bounds, relaxation_gap, solve_pm, CiOpf, PmError,
    PmWeights, SmoBid, VarBounds,
};

const V_LIMITS: (f64, f64) = (0.95, 1.05);

fn weights(xi: f64) -> PmWeights {
    PmWeights {
        xi,
        lmp_p: 0.05,
        lmp_q: 0.01,
    }
}

fn build(net: &ThreePhaseNetwork, bids: &[SmoBid], xi: f64) -> CiOpf {
    let bounds = preprocess_bounds(net, bids, 15f64.to_radians(), V_LIMITS).unwrap();
    assemble_ciopf(net, bids, &bounds, weights(xi)).unwrap()
}

fn baseline_flow(net: &ThreePhaseNetwork, bids: &[SmoBid]) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut inj = vec![c(0.0, 0.0); net.num_node_phases()];
    for b in bids {
        let bus = net.bus_index(&b.bus).unwrap();
        for pb in &b.phases {
            inj[net.node_phase_index(bus, pb.phase).unwrap()] = c(pb.p0, pb.q0);
        }
    }
    let pf = power_flow_oracle(net, &inj).unwrap();
    (net.align(&pf.v), net.align(&pf.i))
}

#[test]
fn relaxation_bounds_exact_two_bus_optimum() {
    let net = two_bus(c(0.02, 0.04), 5.0);
    let bids = [smo_bid("s", "1", vec![phase_bid(Phase::A, -0.5, -0.2, (-0.5, -0.3), (-0.2, -0.1))])];
    let opf = build(&net, &bids, 1.0);
    let sol = solve_pm(&opf).unwrap();
    let grid = grid_search_two_bus(&opf, &net, 2e-3).unwrap();
    assert!(grid.feasible_points > 0);
    assert!(grid.containment < 1e-9);
    assert!(sol.objective <= grid.objective + 1e-6, "{} > {}", sol.objective, grid.objective);
}

#[test]
fn shrinking_boxes_close_the_gap() {
    let net = four_bus();
    let bids = four_bus_bids(1.0);
    let (v, i) = baseline_flow(&net, &bids);
    let gaps: Vec<f64> = [2e-1, 5e-2, 1e-2, 1e-3]
        .iter()
        .map(|&w| {
            let bounds = VarBounds::around(&net, &v, &i, w, (0.8, 1.2));
            let opf = assemble_ciopf(&net, &bids, &bounds, weights(1.0)).unwrap();
            relaxation_gap(&solve_pm(&opf).unwrap(), &net).max_bilinear
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[3] < 1e-3);
}

#[test]
fn point_boxes_reproduce_the_power_flow() {
    let net = four_bus();
    let bids = four_bus_bids(1.0);
    let (v, i) = baseline_flow(&net, &bids);
    let bounds = VarBounds::around(&net, &v, &i, 0.0, (0.8, 1.2));
    let opf = assemble_ciopf(&net, &bids, &bounds, weights(1.0)).unwrap();
    let sol = solve_pm(&opf).unwrap();
    let gap = relaxation_gap(&sol, &net);
    assert!(gap.max_bilinear < 1e-7, "{gap:?}");
    for (got, want) in sol.voltages().iter().zip(&v) {
        assert!((got - want).norm() < 1e-7);
    }
    for n in &sol.nodes {
        let s = n.v() * n.i().conj();
        assert!((s.re - n.p).abs() < 1e-7 && (s.im - n.q).abs() < 1e-7);
    }
}

#[test]
fn balanced_load_on_symmetric_feeder_prices_phases_alike() {
    let net = four_bus();
    let bids: Vec<SmoBid> = ["n1", "n2", "n3"]
        .iter()
        .map(|bus| {
            let phases = Phase::ALL
                .iter()
                .map(|&ph| phase_bid(ph, -0.3, -0.1, (-0.3, -0.2), (-0.1, -0.07)))
                .collect();
            smo_bid(&format!("s-{bus}"), bus, phases)
        })
        .collect();
    let opf = build(&net, &bids, 1.0);
    let sol = solve_pm(&opf).unwrap();
    let dlmp = extract_dlmp(&sol, &opf.y);
    for bus in 0..4 {
        let ph: Vec<_> = dlmp.node_phases.iter().filter(|d| d.bus == bus).collect();
        for d in &ph[1..] {
            assert!((d.lambda_p - ph[0].lambda_p).abs() < 1e-6, "bus {bus}");
            assert!((d.lambda_q - ph[0].lambda_q).abs() < 1e-6, "bus {bus}");
        }
    }
}

#[test]
fn slack_price_is_the_wholesale_price() {
    let net = two_bus(c(0.02, 0.04), 5.0);
    let bids = [smo_bid("s", "1", vec![phase_bid(Phase::A, -0.4, -0.1, (-0.4, -0.3), (-0.1, -0.05))])];
    for xi in [0.0, 1.0] {
        let opf = build(&net, &bids, xi);
        let sol = solve_pm(&opf).unwrap();
        let slack = &sol.nodes[0];
        assert!((slack.lambda_p.abs() - 0.05).abs() < 1e-7, "{}", slack.lambda_p);
        assert!((slack.lambda_q.abs() - 0.01).abs() < 1e-7, "{}", slack.lambda_q);
    }
}

#[test]
fn voltage_prices_follow_the_value_function() {
    let net = three_bus_line(c(0.015, 0.03));
    let bids = [
        smo_bid("s1", "1", vec![phase_bid(Phase::A, 0.1, 0.0, (0.0, 0.15), (-0.05, 0.05))]),
        smo_bid("s2", "2", vec![phase_bid(Phase::A, -0.5, -0.2, (-0.5, -0.35), (-0.2, -0.12))]),
    ];
    let opf = build(&net, &bids, 1.0);
    let sol = solve_pm(&opf).unwrap();
    let dlmp = extract_dlmp(&sol, &opf.y);
    for (k, d) in dlmp.node_phases.iter().enumerate() {
        let re = voltage_value_sensitivity(&opf, k, false, 1e-4);
        let im = voltage_value_sensitivity(&opf, k, true, 1e-4);
        assert!((re - d.lambda_v.re).abs() < 1e-5, "{k}: {re} vs {}", d.lambda_v);
        assert!((im + d.lambda_v.im).abs() < 1e-5, "{k}: {im} vs {}", d.lambda_v);
        assert_eq!(d.lambda_v_bar, d.lambda_v.re);
    }
}

#[test]
fn bid_placement_errors() {
    let net = two_bus(c(0.02, 0.04), 5.0);
    let ok = |bus: &str| smo_bid("s", bus, vec![phase_bid(Phase::A, -0.1, 0.0, (-0.1, 0.0), (0.0, 0.0))]);
    let err = |bids: &[SmoBid]| preprocess_bounds(&net, bids, 0.2, V_LIMITS).unwrap_err();
    assert!(matches!(err(&[ok("7")]), PmError::UnknownBus { .. }));
    assert!(matches!(err(&[ok("0")]), PmError::BidAtSlack { .. }));
    assert!(matches!(err(&[]), PmError::MissingBid { .. }));
    assert!(matches!(err(&[ok("1"), ok("1")]), PmError::DuplicateBid { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Raising the weight on losses and voltage regulation never increases
    /// their sum and never decreases disutility plus generation cost.
    #[test]
    fn xi_sweep_is_pareto_ordered(scale in 0.6f64..1.8) {
        let net = four_bus();
        let bids = four_bus_bids(scale);
        let mut prev: Option<(f64, f64)> = None;
        for xi in [0.0, 0.1, 1.0, 10.0] {
            let sol = solve_pm(&build(&net, &bids, xi)).unwrap();
            let b = sol.breakdown;
            let network = b.losses + b.voltage;
            let market = b.disutility + b.generation_cost;
            if let Some((pn, pm)) = prev {
                prop_assert!(network <= pn + 1e-8, "xi {xi}: {network} > {pn}");
                prop_assert!(market >= pm - 1e-8, "xi {xi}: {market} < {pm}");
            }
            prev = Some((network, market));
            prop_assert!(sol.kkt.passes(1e-6));
        }
    }
}
