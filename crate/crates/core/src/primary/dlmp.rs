//! Distribution LMPs from the relaxed program's duals, and relaxation audits.

use num_complex::Complex64;

use super::ciopf::CiOpfSolution;
use crate::network::{AdmittanceMatrix, Phase, ThreePhaseNetwork};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePhaseDlmp {
    pub bus: usize,
    pub phase: Phase,
    pub lambda_p: f64,
    pub lambda_q: f64,
    /// `Yᵀ λ_I` at this node-phase.
    pub lambda_v: Complex64,
    /// Voltage-support price, `Re(λ_V)`.
    pub lambda_v_bar: f64,
}

/// Phase-averaged prices of one bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDlmp {
    pub bus: usize,
    pub lambda_p: f64,
    pub lambda_q: f64,
    pub lambda_v_bar: f64,
    /// `None` where the bus has zero net active injection.
    pub lambda_eq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dlmp {
    pub node_phases: Vec<NodePhaseDlmp>,
    pub nodes: Vec<NodeDlmp>,
}

/// Computes `λ_V = Yᵀ λ_I` with the admittance the program was built on
/// (the phase-aligned one for [`assemble_ciopf`](super::assemble_ciopf)).
pub fn extract_dlmp(sol: &CiOpfSolution, y: &AdmittanceMatrix) -> Dlmp {
    let lambda_i: Vec<Complex64> = sol.nodes.iter().map(|n| n.lambda_i).collect();
    let lambda_v = y.apply_transpose(&lambda_i);
    let node_phases: Vec<NodePhaseDlmp> = sol
        .nodes
        .iter()
        .zip(lambda_v)
        .map(|(n, lv)| NodePhaseDlmp {
            bus: n.bus,
            phase: n.phase,
            lambda_p: n.lambda_p,
            lambda_q: n.lambda_q,
            lambda_v: lv,
            lambda_v_bar: lv.re,
        })
        .collect();

    let mut dlmp = Dlmp {
        node_phases,
        nodes: Vec::new(),
    };
    let rates = equivalent_rate(&dlmp, sol);
    let mut buses: Vec<usize> = dlmp.node_phases.iter().map(|d| d.bus).collect();
    buses.dedup();
    for (bus, rate) in buses.into_iter().zip(rates) {
        let ph: Vec<&NodePhaseDlmp> = dlmp.node_phases.iter().filter(|d| d.bus == bus).collect();
        let mean = |f: fn(&NodePhaseDlmp) -> f64| ph.iter().map(|d| f(d)).sum::<f64>() / ph.len() as f64;
        dlmp.nodes.push(NodeDlmp {
            bus,
            lambda_p: mean(|d| d.lambda_p),
            lambda_q: mean(|d| d.lambda_q),
            lambda_v_bar: mean(|d| d.lambda_v_bar),
            lambda_eq: rate,
        });
    }
    dlmp
}

/// `(λ_P P + λ_Q Q + λ̄_V ΔV) / P` with `ΔV = |V^R − 1| + |V^I|`; `None` when
/// `P` is zero.
pub fn equivalent_rate_at(
    lambda_p: f64,
    lambda_q: f64,
    lambda_v_bar: f64,
    p: f64,
    q: f64,
    v: Complex64,
) -> Option<f64> {
    if p == 0.0 {
        return None;
    }
    let dv = (v.re - 1.0).abs() + v.im.abs();
    Some((lambda_p * p + lambda_q * q + lambda_v_bar * dv) / p)
}

/// Equivalent rate per bus, summing numerator and denominator over the bus's
/// phases. Buses appear in node-phase order.
pub fn equivalent_rate(dlmp: &Dlmp, sol: &CiOpfSolution) -> Vec<Option<f64>> {
    let mut out: Vec<(usize, f64, f64)> = Vec::new();
    for (d, n) in dlmp.node_phases.iter().zip(&sol.nodes) {
        let dv = (n.vr - 1.0).abs() + n.vi.abs();
        let num = d.lambda_p * n.p + d.lambda_q * n.q + d.lambda_v_bar * dv;
        match out.last_mut() {
            Some(last) if last.0 == d.bus => {
                last.1 += num;
                last.2 += n.p;
            }
            _ => out.push((d.bus, num, n.p)),
        }
    }
    out.into_iter()
        .map(|(_, num, p)| (p.abs() > 1e-12).then(|| num / p))
        .collect()
}

/// Violations of the exact model by a relaxed optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `|P − (VR·IR + VI·II)|` per node-phase.
    pub p_violation: Vec<f64>,
    /// `|Q − (VI·IR − VR·II)|` per node-phase.
    pub q_violation: Vec<f64>,
    pub max_bilinear: f64,
    /// Largest distance of `|V|` outside the voltage limits.
    pub ring_violation: f64,
    /// Largest excess of a branch current over its ampacity.
    pub ampacity_violation: f64,
}

pub fn relaxation_gap(sol: &CiOpfSolution, net: &ThreePhaseNetwork) -> GapReport {
    let (vmin, vmax) = sol.v_limits;
    let mut p_violation = Vec::with_capacity(sol.nodes.len());
    let mut q_violation = Vec::with_capacity(sol.nodes.len());
    let mut ring: f64 = 0.0;
    for n in &sol.nodes {
        p_violation.push((n.p - (n.vr * n.ir + n.vi * n.ii)).abs());
        q_violation.push((n.q - (-n.vr * n.ii + n.vi * n.ir)).abs());
        if n.bus != net.slack() {
            let m = n.v().norm();
            ring = ring.max(vmin - m).max(m - vmax);
        }
    }
    let mut amp: f64 = 0.0;
    for f in &sol.branch_flows {
        let br = &net.branches()[f.branch];
        let k = br.phases.position(f.phase).expect("flow on branch phase");
        amp = amp.max(f.current.norm() - br.i_max[k]);
    }
    let max_bilinear = p_violation
        .iter()
        .chain(&q_violation)
        .copied()
        .fold(0.0, f64::max);
    GapReport {
        p_violation,
        q_violation,
        max_bilinear,
        ring_violation: ring.max(0.0),
        ampacity_violation: amp.max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn equivalent_rate_examples() {
        assert_eq!(equivalent_rate_at(1.0, 0.0, 0.0, 2.0, 0.0, Complex64::new(1.0, 0.0)), Some(1.0));
        let r = equivalent_rate_at(1.0, 0.1, 0.5, 1.0, 0.2, Complex64::new(1.02, 0.01)).unwrap();
        assert!((r - 1.035).abs() < 1e-12);
        assert_eq!(equivalent_rate_at(1.0, 0.1, 0.5, 0.0, 0.2, Complex64::new(1.0, 0.0)), None);
    }

    #[test]
    fn identity_admittance_passes_duals_through() {
        let y = AdmittanceMatrix {
            y: DMatrix::identity(3, 3),
        };
        let l = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.0), Complex64::new(-3.0, 1.0)];
        assert_eq!(y.apply_transpose(&l), l);
    }
}
