//! Variable boxes for the McCormick envelopes.

use num_complex::Complex64;

use super::mccormick::Interval;
use super::{bid_map, PmError, SmoBid};
use crate::network::{build_admittance, ThreePhaseNetwork};

/// Boxes of one node-phase in the phase-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeBox {
    pub vr: Interval,
    pub vi: Interval,
    pub ir: Interval,
    pub ii: Interval,
}

impl NodeBox {
    pub fn contains(&self, v: Complex64, i: Complex64) -> bool {
        self.vr.contains(v.re)
            && self.vi.contains(v.im)
            && self.ir.contains(i.re)
            && self.ii.contains(i.im)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBounds {
    /// One box per node-phase, in network node-phase order.
    pub boxes: Vec<NodeBox>,
    pub v_limits: (f64, f64),
}

impl VarBounds {
    /// Boxes of the given width centred on a known operating point (aligned
    /// frame). Slack voltages stay pinned.
    pub fn around(
        net: &ThreePhaseNetwork,
        v: &[Complex64],
        i: &[Complex64],
        width: f64,
        v_limits: (f64, f64),
    ) -> Self {
        let h = 0.5 * width;
        let widen = |x: f64| Interval::new(x - h, x + h);
        let boxes = net
            .node_phases()
            .iter()
            .enumerate()
            .map(|(k, np)| {
                let (vr, vi) = if net.is_slack(*np) {
                    (Interval::point(v[k].re), Interval::point(v[k].im))
                } else {
                    (widen(v[k].re), widen(v[k].im))
                };
                NodeBox {
                    vr,
                    vi,
                    ir: widen(i[k].re),
                    ii: widen(i[k].im),
                }
            })
            .collect();
        Self { boxes, v_limits }
    }
}

/// Derives voltage and current boxes from the voltage limits, the angle
/// window (radians, around each phase's nominal angle) and the bid limits.
///
/// Voltage boxes are the rectangular hull of the polar sector; current boxes
/// intersect interval arithmetic on `I = Y V`, the bound `|S| / |V|min` from
/// bid extremes, the summed ampacity of adjacent branches, and for the slack,
/// per-phase current balance against every other node.
pub fn preprocess_bounds(
    net: &ThreePhaseNetwork,
    bids: &[SmoBid],
    theta_window: f64,
    v_limits: (f64, f64),
) -> Result<VarBounds, PmError> {
    let (vmin, vmax) = v_limits;
    if !(vmin > 0.0 && vmin <= vmax && vmax.is_finite()) {
        return Err(PmError::BadSettings(format!(
            "voltage limits [{vmin}, {vmax}] must satisfy 0 < min <= max"
        )));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta_window) {
        return Err(PmError::BadSettings(format!(
            "angle window {theta_window} rad must lie in [0, pi/2)"
        )));
    }
    let map = bid_map(net, bids)?;
    let y = build_admittance(net)?.rotated(&net.phase_rotations());
    let nominal = net.align(&net.nominal_voltages());
    let n = net.num_node_phases();

    let sector = (
        Interval::new(vmin * theta_window.cos(), vmax),
        Interval::symmetric(vmax * theta_window.sin()),
    );
    let v_boxes: Vec<(Interval, Interval)> = (0..n)
        .map(|k| {
            if net.is_slack(net.node_phases()[k]) {
                (Interval::point(nominal[k].re), Interval::point(nominal[k].im))
            } else {
                sector
            }
        })
        .collect();

    let mut ampacity = vec![0.0; n];
    for b in 0..net.branches().len() {
        let br = &net.branches()[b];
        for (p, (f, t)) in net.branch_terminals(b).into_iter().enumerate() {
            ampacity[f] += br.i_max[p];
            ampacity[t] += br.i_max[p];
        }
    }

    let v_floor = vmin * theta_window.cos();
    let mut i_boxes = Vec::with_capacity(n);
    for k in 0..n {
        let (mut ir, mut ii) = (Interval::point(0.0), Interval::point(0.0));
        for m in 0..n {
            let (g, bm) = (y.y[(k, m)].re, y.y[(k, m)].im);
            let (vr, vi) = v_boxes[m];
            ir = ir + vr.scale(g) + vi.scale(-bm);
            ii = ii + vi.scale(g) + vr.scale(bm);
        }
        let amp = Interval::symmetric(ampacity[k]);
        ir = ir.intersect(amp);
        ii = ii.intersect(amp);
        if let Some((_, pb)) = map[k] {
            let p = pb.p_range.lo.abs().max(pb.p_range.hi.abs());
            let q = pb.q_range.lo.abs().max(pb.q_range.hi.abs());
            let r = Interval::symmetric(p.hypot(q) / v_floor);
            ir = ir.intersect(r);
            ii = ii.intersect(r);
        }
        i_boxes.push((ir, ii));
    }

    // Slack currents balance every other node-phase of the same phase.
    for k in 0..n {
        let npk = net.node_phases()[k];
        if !net.is_slack(npk) {
            continue;
        }
        let (mut sr, mut si) = (Interval::point(0.0), Interval::point(0.0));
        for m in 0..n {
            let npm = net.node_phases()[m];
            if npm.phase == npk.phase && !net.is_slack(npm) {
                sr = sr + -i_boxes[m].0;
                si = si + -i_boxes[m].1;
            }
        }
        i_boxes[k].0 = i_boxes[k].0.intersect(sr);
        i_boxes[k].1 = i_boxes[k].1.intersect(si);
    }

    let mut boxes = Vec::with_capacity(n);
    for k in 0..n {
        let b = NodeBox {
            vr: v_boxes[k].0,
            vi: v_boxes[k].1,
            ir: i_boxes[k].0,
            ii: i_boxes[k].1,
        };
        for (quantity, iv) in [("I real", b.ir), ("I imaginary", b.ii)] {
            if iv.is_empty() {
                let np = net.node_phases()[k];
                return Err(PmError::EmptyBounds {
                    bus: net.buses()[np.bus].id.clone(),
                    phase: np.phase,
                    quantity,
                });
            }
        }
        boxes.push(b);
    }
    Ok(VarBounds { boxes, v_limits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{c, two_bus};
    use crate::powerflow::power_flow_oracle;
    use crate::primary::fixtures::single_phase_bid;

    #[test]
    fn slack_is_pinned_and_zero_window_flattens_imaginary() {
        let net = two_bus(c(0.01, 0.02));
        let bid = single_phase_bid(
            "s",
            "1",
            Interval::new(-0.2, 0.2),
            Interval::new(-0.1, 0.1),
            0.0,
            0.0,
        );
        let b = preprocess_bounds(&net, &[bid], 0.0, (0.95, 1.05)).unwrap();
        assert!(b.boxes[0].vr.is_point() && b.boxes[0].vr.lo == 1.0);
        assert!(b.boxes[0].vi.is_point() && b.boxes[0].vi.lo == 0.0);
        assert_eq!(b.boxes[1].vr, Interval::new(0.95, 1.05));
        assert_eq!(b.boxes[1].vi, Interval::point(0.0));
    }

    #[test]
    fn current_boxes_contain_power_flow_sweep() {
        let net = two_bus(c(0.01, 0.02));
        let bid = single_phase_bid(
            "s",
            "1",
            Interval::new(-0.2, 0.2),
            Interval::new(-0.05, 0.05),
            0.0,
            0.0,
        );
        let b = preprocess_bounds(&net, &[bid], 15f64.to_radians(), (0.95, 1.05)).unwrap();
        for step in 0..=20 {
            let p = -0.2 + 0.02 * step as f64;
            let sol = power_flow_oracle(&net, &[c(0.0, 0.0), c(p, 0.05)]).unwrap();
            let v = net.align(&sol.v);
            let i = net.align(&sol.i);
            for k in 0..2 {
                assert!(b.boxes[k].contains(v[k], i[k]), "p = {p}, node {k}");
            }
        }
    }

    #[test]
    fn missing_bid_is_rejected() {
        let net = two_bus(c(0.01, 0.02));
        let err = preprocess_bounds(&net, &[], 0.1, (0.95, 1.05)).unwrap_err();
        assert!(matches!(err, PmError::MissingBid { .. }));
    }
}
