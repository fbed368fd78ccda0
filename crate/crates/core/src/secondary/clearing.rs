//! Lexicographic clearing of one SMO's DCAs.
//!
//! Stages in ranking order, each a minimization:
//!
//! 1. trust-weighted flexibility, `−Σ_j C_j Σ_φ (δP + δQ)`
//! 2. total flexibility, `−Σ_j Σ_φ (δP + δQ)`
//! 3. disutility, `Σ_j Σ_φ βP (P − P⁰)² + βQ (Q − Q⁰)²`
//!
//! After each stage its optimum `F*` is frozen as `F ≤ F* + ε|F*|` for all
//! later stages.

use std::fmt;

use super::{
    minkowski_range, DcaBid, DcaPhaseSchedule, DcaSchedule, PmSetpoint, SmClearingResult, SmError,
};
use crate::convex::{ConvexProgram, KktReport, SolverSettings, Var};
use crate::network::Phase;
use crate::primary::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrustedFlexibility,
    TotalFlexibility,
    Disutility,
}

impl Stage {
    pub const ORDER: [Stage; 3] = [
        Stage::TrustedFlexibility,
        Stage::TotalFlexibility,
        Stage::Disutility,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::TrustedFlexibility => "trusted-flexibility",
            Stage::TotalFlexibility => "total-flexibility",
            Stage::Disutility => "disutility",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    /// Stage objective at this stage's solution (without tie-breaking).
    pub optimum: f64,
    /// Every stage objective evaluated at this stage's solution.
    pub values: [f64; 3],
    pub kkt: KktReport,
}

/// Stage-one optimum of the literal squared-deviation objective, found by
/// enumeration (tiny instances only).
#[derive(Debug, Clone, PartialEq)]
pub struct LiteralF1 {
    pub optimum: f64,
    /// Active-power setpoint per DCA at the enumerated optimum.
    pub setpoints: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmSettings {
    pub epsilon: f64,
    /// Weight of the pull toward baselines that makes stage solutions unique.
    pub tie_break: f64,
    /// When set, also enumerate the literal stage-one objective on a grid of
    /// this step and report it alongside the clearing.
    pub literal_f1_step: Option<f64>,
}

impl Default for SmSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            tie_break: 1e-9,
            literal_f1_step: None,
        }
    }
}

struct Layout {
    // (dca index, phase, p, q, dp, dq)
    cells: Vec<(usize, Phase, Var, Var, Var, Var)>,
}

fn stage_terms(stage: Stage, bids: &[DcaBid], layout: &Layout) -> Vec<(Var, f64)> {
    let mut t = Vec::new();
    for &(j, _, _, _, dp, dq) in &layout.cells {
        let w = match stage {
            Stage::TrustedFlexibility => -bids[j].commitment,
            Stage::TotalFlexibility => -1.0,
            Stage::Disutility => unreachable!("quadratic stage"),
        };
        t.push((dp, w));
        t.push((dq, w));
    }
    t
}

fn stage_value(stage: Stage, bids: &[DcaBid], layout: &Layout, x: &[f64]) -> f64 {
    match stage {
        Stage::Disutility => layout
            .cells
            .iter()
            .map(|&(j, phase, p, q, _, _)| {
                let b = &bids[j];
                let ph = b.phase(phase).expect("layout phase");
                b.beta_p * (x[p.index()] - ph.p0).powi(2) + b.beta_q * (x[q.index()] - ph.q0).powi(2)
            })
            .sum(),
        _ => stage_terms(stage, bids, layout)
            .iter()
            .map(|&(v, c)| c * x[v.index()])
            .sum(),
    }
}

pub fn clear_sm_lexicographic(
    smo: &str,
    bids: &[DcaBid],
    setpoint: &PmSetpoint,
    epsilon: f64,
) -> Result<SmClearingResult, SmError> {
    clear_sm_with(
        smo,
        bids,
        setpoint,
        &SmSettings {
            epsilon,
            ..SmSettings::default()
        },
    )
}

pub fn clear_sm_with(
    smo: &str,
    bids: &[DcaBid],
    setpoint: &PmSetpoint,
    settings: &SmSettings,
) -> Result<SmClearingResult, SmError> {
    if !(settings.epsilon >= 0.0 && settings.epsilon.is_finite()) {
        return Err(SmError::BadSettings(format!("epsilon {} must be >= 0", settings.epsilon)));
    }
    for b in bids {
        b.validate()?;
        if b.smo != smo {
            return Err(SmError::WrongSmo {
                dca: b.dca.clone(),
                bid_smo: b.smo.clone(),
                smo: smo.to_string(),
            });
        }
        for ph in &b.phases {
            if setpoint.phase(ph.phase).is_none() {
                return Err(SmError::UncoveredPhase {
                    dca: b.dca.clone(),
                    phase: ph.phase,
                });
            }
        }
    }
    for sp in &setpoint.phases {
        let (pr, qr) = minkowski_range(bids, sp.phase);
        for (commodity, v, r) in [('P', sp.p, pr), ('Q', sp.q, qr)] {
            let tol = 1e-9 * (1.0 + v.abs());
            if v < r.lo - tol || v > r.hi + tol {
                return Err(SmError::InfeasibleBalance {
                    commodity,
                    phase: sp.phase,
                    setpoint: v,
                    range: r,
                });
            }
        }
    }

    let mut prog = ConvexProgram::new();
    prog.settings = SolverSettings {
        feas_tol: 1e-10,
        gap_tol: 1e-10,
        ..SolverSettings::default()
    };
    let mut layout = Layout { cells: Vec::new() };
    for (j, b) in bids.iter().enumerate() {
        for ph in &b.phases {
            let name = format!("{}.{}", b.dca, ph.phase);
            let p = prog.add_var(format!("P[{name}]"), ph.p_range.lo, ph.p_range.hi);
            let q = prog.add_var(format!("Q[{name}]"), ph.q_range.lo, ph.q_range.hi);
            let radius = |prog: &mut ConvexProgram, what: &str, x: Var, r: Interval| {
                let half = 0.5 * r.width();
                let d = prog.add_var(format!("d{what}[{name}]"), 0.0, half);
                if half > 0.0 {
                    prog.add_ge("range_lo", &[(x, 1.0), (d, -1.0)], r.lo);
                    prog.add_le("range_hi", &[(x, 1.0), (d, 1.0)], r.hi);
                }
                d
            };
            let dp = radius(&mut prog, "P", p, ph.p_range);
            let dq = radius(&mut prog, "Q", q, ph.q_range);
            layout.cells.push((j, ph.phase, p, q, dp, dq));
        }
    }
    for sp in &setpoint.phases {
        let ps: Vec<(Var, f64)> = layout
            .cells
            .iter()
            .filter(|c| c.1 == sp.phase)
            .map(|c| (c.2, 1.0))
            .collect();
        let qs: Vec<(Var, f64)> = layout
            .cells
            .iter()
            .filter(|c| c.1 == sp.phase)
            .map(|c| (c.3, 1.0))
            .collect();
        if !ps.is_empty() {
            prog.add_eq("balance_p", &ps, sp.p);
            prog.add_eq("balance_q", &qs, sp.q);
        }
    }

    let mut stages: Vec<StageRecord> = Vec::new();
    let mut x_final = Vec::new();
    for (k, &stage) in Stage::ORDER.iter().enumerate() {
        let mut sp = prog.clone();
        // Frozen optima of earlier stages.
        for rec in &stages {
            let cap = rec.optimum + settings.epsilon * rec.optimum.abs();
            sp.add_le("degradation", &stage_terms(rec.stage, bids, &layout), cap);
        }
        match stage {
            Stage::Disutility => {
                for &(j, phase, p, q, _, _) in &layout.cells {
                    let b = &bids[j];
                    let ph = b.phase(phase).expect("layout phase");
                    sp.add_squared_affine(&[(p, 1.0)], -ph.p0, b.beta_p);
                    sp.add_squared_affine(&[(q, 1.0)], -ph.q0, b.beta_q);
                }
            }
            _ => {
                for (v, c) in stage_terms(stage, bids, &layout) {
                    sp.add_linear(v, c);
                }
            }
        }
        if settings.tie_break > 0.0 {
            for &(j, phase, p, q, _, _) in &layout.cells {
                let ph = bids[j].phase(phase).expect("layout phase");
                sp.add_squared_affine(&[(p, 1.0)], -ph.p0, settings.tie_break);
                sp.add_squared_affine(&[(q, 1.0)], -ph.q0, settings.tie_break);
            }
        }
        let res = sp.solve()?;
        if !res.is_optimal() {
            return Err(SmError::Unsolved {
                stage,
                status: res.status,
            });
        }
        let values = Stage::ORDER.map(|s| stage_value(s, bids, &layout, &res.x));
        stages.push(StageRecord {
            stage,
            optimum: values[k],
            values,
            kkt: res.residuals,
        });
        x_final = res.x;
    }

    let mut schedules: Vec<DcaSchedule> = bids
        .iter()
        .map(|b| DcaSchedule {
            dca: b.dca.clone(),
            kind_p: b.kind_p,
            kind_q: b.kind_q,
            commitment: b.commitment,
            beta_p: b.beta_p,
            beta_q: b.beta_q,
            phases: Vec::new(),
        })
        .collect();
    // Interior-point iterates can sit a rounding error outside their bounds.
    let value = |v: Var| {
        let (lo, hi) = prog.bounds(v);
        x_final[v.index()].clamp(lo, hi)
    };
    for &(j, phase, p, q, dp, dq) in &layout.cells {
        schedules[j].phases.push(DcaPhaseSchedule {
            phase,
            p: value(p),
            q: value(q),
            delta_p: value(dp),
            delta_q: value(dq),
        });
    }
    let literal_f1 = match settings.literal_f1_step {
        Some(step) => Some(literal_f1_enumeration(bids, setpoint, step)?),
        None => None,
    };
    Ok(SmClearingResult {
        smo: smo.to_string(),
        setpoint: setpoint.clone(),
        schedules,
        stages,
        literal_f1,
    })
}

/// Minimizes the literal stage-one objective `−Σ_j C_j (P_j − P⁰_j)²` over a
/// grid of active-power setpoints on single-phase instances with fixed
/// reactive power. The objective is concave, so this is the only exact
/// method offered; it scales as `(range / step)^(n − 1)`.
pub fn literal_f1_enumeration(
    bids: &[DcaBid],
    setpoint: &PmSetpoint,
    step: f64,
) -> Result<LiteralF1, SmError> {
    if bids.is_empty() || bids.len() > 4 || !(step > 0.0) {
        return Err(SmError::BadSettings(
            "literal stage-one enumeration needs 1-4 DCAs and a positive step".into(),
        ));
    }
    if setpoint.phases.len() != 1 || bids.iter().any(|b| b.phases.len() != 1) {
        return Err(SmError::BadSettings(
            "literal stage-one enumeration supports single-phase instances only".into(),
        ));
    }
    let target = setpoint.phases[0].p;
    let cells: Vec<_> = bids.iter().map(|b| &b.phases[0]).collect();
    let n = bids.len();
    let grid = |k: usize| -> Vec<f64> {
        let r = cells[k].p_range;
        let m = (r.width() / step).round() as usize;
        (0..=m).map(|i| (r.lo + i as f64 * step).min(r.hi)).collect()
    };
    let grids: Vec<Vec<f64>> = (0..n - 1).map(grid).collect();
    let mut best: Option<LiteralF1> = None;
    let mut idx = vec![0usize; n - 1];
    loop {
        let mut ps: Vec<f64> = (0..n - 1).map(|k| grids[k][idx[k]]).collect();
        let last = target - ps.iter().sum::<f64>();
        let r = cells[n - 1].p_range;
        if last >= r.lo - 1e-12 && last <= r.hi + 1e-12 {
            ps.push(last.clamp(r.lo, r.hi));
            let f: f64 = -(0..n)
                .map(|k| bids[k].commitment * (ps[k] - cells[k].p0).powi(2))
                .sum::<f64>();
            if best.as_ref().is_none_or(|b| f < b.optimum) {
                best = Some(LiteralF1 {
                    optimum: f,
                    setpoints: ps,
                });
            }
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == n - 1 {
                return best.ok_or(SmError::InfeasibleBalance {
                    commodity: 'P',
                    phase: setpoint.phases[0].phase,
                    setpoint: target,
                    range: minkowski_range(bids, setpoint.phases[0].phase).0,
                });
            }
            idx[k] += 1;
            if idx[k] < grids[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
