#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;

use lemsim::network::{Branch, Bus, BusKind, Phase, PhaseSet, ThreePhaseNetwork};
use lemsim::primary::{CiOpf, Interval, PhaseBid, SmoBid};
use lemsim::secondary::{DcaBid, DcaKind, DcaPhaseBid, PhaseSetpoint, PmSetpoint};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn two_bus(z: Complex64, i_max: f64) -> ThreePhaseNetwork {
    let a = PhaseSet::single(Phase::A);
    ThreePhaseNetwork::new(
        vec![Bus::new("0", a, BusKind::Slack), Bus::new("1", a, BusKind::Pq)],
        vec![Branch::uncoupled("l01", "0", "1", a, z, i_max)],
        1e6,
        2400.0,
    )
    .unwrap()
}

/// Single-phase three-bus radial line 0 - 1 - 2.
pub fn three_bus_line(z: Complex64) -> ThreePhaseNetwork {
    let a = PhaseSet::single(Phase::A);
    ThreePhaseNetwork::new(
        vec![
            Bus::new("0", a, BusKind::Slack),
            Bus::new("1", a, BusKind::Pq),
            Bus::new("2", a, BusKind::Pq),
        ],
        vec![
            Branch::uncoupled("l01", "0", "1", a, z, 5.0),
            Branch::uncoupled("l12", "1", "2", a, z, 5.0),
        ],
        1e6,
        2400.0,
    )
    .unwrap()
}

/// Coupled three-phase impedance with identical self and mutual terms.
pub fn coupled(z_self: Complex64, z_mutual: Complex64) -> DMatrix<Complex64> {
    DMatrix::from_fn(3, 3, |i, j| if i == j { z_self } else { z_mutual })
}

/// Three-phase four-bus feeder: sub - n1, n1 - n2, n1 - n3.
pub fn four_bus() -> ThreePhaseNetwork {
    let abc = PhaseSet::ABC;
    let br = |id: &str, f: &str, t: &str, s: f64| Branch {
        id: id.into(),
        from: f.into(),
        to: t.into(),
        phases: abc,
        z: coupled(c(0.010, 0.020), c(0.003, 0.008)).map(|x| x * s),
        i_max: vec![3.0; 3],
    };
    ThreePhaseNetwork::new(
        vec![
            Bus::new("sub", abc, BusKind::Slack),
            Bus::new("n1", abc, BusKind::Pq),
            Bus::new("n2", abc, BusKind::Pq),
            Bus::new("n3", abc, BusKind::Pq),
        ],
        vec![br("l1", "sub", "n1", 1.0), br("l2", "n1", "n2", 1.5), br("l3", "n1", "n3", 1.25)],
        1e6,
        2400.0,
    )
    .unwrap()
}

pub fn phase_bid(phase: Phase, p0: f64, q0: f64, p: (f64, f64), q: (f64, f64)) -> PhaseBid {
    PhaseBid {
        phase,
        p0,
        q0,
        p_range: Interval::new(p.0, p.1),
        q_range: Interval::new(q.0, q.1),
        p_load0: p0.min(0.0),
        q_load0: q0.min(0.0),
    }
}

pub fn smo_bid(smo: &str, bus: &str, phases: Vec<PhaseBid>) -> SmoBid {
    SmoBid {
        smo: smo.into(),
        bus: bus.into(),
        phases,
        alpha_p: 0.04,
        alpha_q: 0.008,
        beta_p: 0.5,
        beta_q: 0.3,
    }
}

/// Unbalanced loaded bids on the three non-slack buses of [`four_bus`].
pub fn four_bus_bids(scale: f64) -> Vec<SmoBid> {
    let loads = [
        ("n1", [-0.30, -0.22, -0.26]),
        ("n2", [-0.18, -0.28, -0.15]),
        ("n3", [-0.24, -0.16, -0.30]),
    ];
    loads
        .iter()
        .map(|(bus, ps)| {
            let phases = Phase::ALL
                .iter()
                .zip(ps)
                .map(|(&ph, &p)| {
                    let p = p * scale;
                    let q = 0.3 * p;
                    phase_bid(ph, p, q, (p, p + 0.25 * p.abs()), (q, q + 0.25 * q.abs()))
                })
                .collect();
            smo_bid(&format!("smo-{bus}"), bus, phases)
        })
        .collect()
}

/// Optimum of the exact (non-relaxed) two-bus problem by grid search over
/// the load bus voltage inside the relaxation's voltage box.
pub struct GridOptimum {
    pub objective: f64,
    pub v: Complex64,
    pub feasible_points: usize,
    /// Largest violation of the relaxed program's constraints by any exact
    /// feasible point; zero when the relaxation contains the exact set.
    pub containment: f64,
}

pub fn grid_search_two_bus(opf: &CiOpf, net: &ThreePhaseNetwork, step: f64) -> Option<GridOptimum> {
    let y = &opf.y.y;
    let (vmin, vmax) = opf.bounds.v_limits;
    let bx = opf.bounds.boxes[1];
    let prog = &opf.program;
    let (v0r, v0i) = (opf.bounds.boxes[0].vr.lo, opf.bounds.boxes[0].vi.lo);
    let v0 = c(v0r, v0i);
    let i_max = net.branches()[0].i_max[0];
    let z = net.branches()[0].z[(0, 0)];
    let mut best: Option<GridOptimum> = None;
    let mut containment: f64 = 0.0;
    let mut feasible = 0;
    let nr = ((bx.vr.hi - bx.vr.lo) / step).floor() as usize;
    let ni = ((bx.vi.hi - bx.vi.lo) / step).floor() as usize;
    for a in 0..=nr {
        for b in 0..=ni {
            let v1 = c(bx.vr.lo + a as f64 * step, bx.vi.lo + b as f64 * step);
            let m = v1.norm();
            if m < vmin || m > vmax {
                continue;
            }
            if ((v0 - v1) / z).norm() > i_max {
                continue;
            }
            let v = [v0, v1];
            let i: Vec<Complex64> = (0..2).map(|r| y[(r, 0)] * v[0] + y[(r, 1)] * v[1]).collect();
            let s: Vec<Complex64> = (0..2).map(|r| v[r] * i[r].conj()).collect();
            let (plo, phi) = prog.bounds(opf.vars[1].p);
            let (qlo, qhi) = prog.bounds(opf.vars[1].q);
            if s[1].re < plo || s[1].re > phi || s[1].im < qlo || s[1].im > qhi {
                continue;
            }
            let mut x = vec![0.0; prog.num_vars()];
            for k in 0..2 {
                let nv = opf.vars[k];
                x[nv.p.index()] = s[k].re;
                x[nv.q.index()] = s[k].im;
                x[nv.vr.index()] = v[k].re;
                x[nv.vi.index()] = v[k].im;
                x[nv.ir.index()] = i[k].re;
                x[nv.ii.index()] = i[k].im;
                x[nv.a.index()] = v[k].re * i[k].re;
                x[nv.b.index()] = v[k].im * i[k].im;
                x[nv.c.index()] = v[k].re * i[k].im;
                x[nv.d.index()] = v[k].im * i[k].re;
            }
            feasible += 1;
            containment = containment.max(prog.max_violation(&x));
            let f = prog.objective_at(&x);
            if best.as_ref().is_none_or(|g| f < g.objective) {
                best = Some(GridOptimum {
                    objective: f,
                    v: v1,
                    feasible_points: 0,
                    containment: 0.0,
                });
            }
        }
    }
    best.map(|mut g| {
        g.feasible_points = feasible;
        g.containment = containment;
        g
    })
}

/// Central difference of the optimal objective when node-phase `k`'s voltage
/// is shifted by `δ` (real part, or imaginary part when `imag`) inside
/// Ohm's law, `I = Y (V − δ e_k)`.
pub fn voltage_value_sensitivity(opf: &CiOpf, k: usize, imag: bool, delta: f64) -> f64 {
    let y = &opf.y.y;
    let solve_with = |d: f64| {
        let mut p = opf.program.clone();
        for (m, rows) in opf.rows.iter().enumerate() {
            let ymk = y[(m, k)];
            let shift = if imag { ymk * c(0.0, 1.0) } else { ymk };
            p.set_eq_rhs(rows.ohm_re, -d * shift.re);
            p.set_eq_rhs(rows.ohm_im, -d * shift.im);
        }
        let r = p.solve().unwrap();
        assert!(r.is_optimal(), "perturbed solve: {}", r.status);
        r.objective
    };
    (solve_with(delta) - solve_with(-delta)) / (2.0 * delta)
}

pub fn single_phase_dca(
    id: &str,
    kind: DcaKind,
    p0: f64,
    p_range: (f64, f64),
    q0: f64,
    q_range: (f64, f64),
    commitment: f64,
    beta: (f64, f64),
) -> DcaBid {
    DcaBid {
        dca: id.into(),
        smo: "smo".into(),
        kind_p: kind,
        kind_q: kind,
        phases: vec![DcaPhaseBid {
            phase: Phase::A,
            p0,
            q0,
            p_range: Interval::new(p_range.0, p_range.1),
            q_range: Interval::new(q_range.0, q_range.1),
        }],
        commitment,
        beta_p: beta.0,
        beta_q: beta.1,
    }
}

pub fn setpoint(p: f64, q: f64, mu_p: f64, mu_q: f64) -> PmSetpoint {
    PmSetpoint {
        time: 0.0,
        phases: vec![PhaseSetpoint {
            phase: Phase::A,
            p,
            q,
            mu_p,
            mu_q,
        }],
    }
}

/// Lexicographic optimum of the secondary clearing by brute force over a grid
/// of active-power setpoints and flexibility radii (single phase, fixed Q).
/// Returns the three stage optima.
pub fn sm_grid_oracle(bids: &[DcaBid], target: f64, epsilon: f64, h: f64) -> [f64; 3] {
    let n = bids.len();
    let cells: Vec<&DcaPhaseBid> = bids.iter().map(|b| &b.phases[0]).collect();
    let grid = |r: Interval| -> Vec<f64> {
        let m = (r.width() / h + 1e-9).floor() as usize;
        (0..=m).map(|i| r.lo + i as f64 * h).collect()
    };
    let p_grids: Vec<Vec<f64>> = cells.iter().take(n - 1).map(|c| grid(c.p_range)).collect();
    let mut points: Vec<[f64; 3]> = Vec::new();

    let mut idx = vec![0usize; n.saturating_sub(1)];
    loop {
        let mut ps: Vec<f64> = (0..n - 1).map(|k| p_grids[k][idx[k]]).collect();
        let last = target - ps.iter().sum::<f64>();
        let r = cells[n - 1].p_range;
        if last >= r.lo - 1e-9 && last <= r.hi + 1e-9 {
            ps.push(last.clamp(r.lo, r.hi));
            let f4: f64 = (0..n).map(|k| bids[k].beta_p * (ps[k] - cells[k].p0).powi(2)).sum();
            // Radii grids.
            let caps: Vec<usize> = (0..n)
                .map(|k| {
                    let r = cells[k].p_range;
                    (((ps[k] - r.lo).min(r.hi - ps[k])).max(0.0) / h + 1e-9).floor() as usize
                })
                .collect();
            let mut d = vec![0usize; n];
            loop {
                let f1: f64 = -(0..n).map(|k| bids[k].commitment * d[k] as f64 * h).sum::<f64>();
                let f3: f64 = -(0..n).map(|k| d[k] as f64 * h).sum::<f64>();
                points.push([f1, f3, f4]);
                let mut k = 0;
                while k < n {
                    d[k] += 1;
                    if d[k] <= caps[k] {
                        break;
                    }
                    d[k] = 0;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
        let mut k = 0;
        while k + 1 < n {
            idx[k] += 1;
            if idx[k] < p_grids[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k + 1 >= n {
            break;
        }
    }
    assert!(!points.is_empty(), "grid has no feasible point");
    let mut optima = [0.0; 3];
    let mut alive: Vec<&[f64; 3]> = points.iter().collect();
    for s in 0..3 {
        let best = alive.iter().map(|p| p[s]).fold(f64::INFINITY, f64::min);
        optima[s] = best;
        let cap = best + epsilon * best.abs() + 1e-12;
        alive.retain(|p| p[s] <= cap);
    }
    optima
}
