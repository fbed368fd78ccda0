//! Secondary market: per-SMO scheduling of DCAs against the primary-market
//! setpoint, ex-post retail tariffs, and aggregation of the schedules into the
//! SMO's next primary-market bid.

mod clearing;
mod tariffs;

use thiserror::Error;

use crate::convex::{ProgramError, SolveStatus};
use crate::network::Phase;
use crate::primary::{Interval, PhaseBid, SmoBid};

pub use clearing::{
    clear_sm_lexicographic, clear_sm_with, literal_f1_enumeration, LiteralF1, SmSettings, Stage,
    StageRecord,
};
pub use tariffs::{
    classify_commodity_sets, compute_price_multipliers, compute_retail_tariffs,
    generator_multiplier, load_multiplier, pm_revenue, retail_tariff, CommoditySets, DcaTariff,
    PriceMultipliers, RetailTariffs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DcaKind {
    Load,
    Generator,
}

impl DcaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DcaKind::Load => "load",
            DcaKind::Generator => "generator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcaPhaseBid {
    pub phase: Phase,
    pub p0: f64,
    pub q0: f64,
    pub p_range: Interval,
    pub q_range: Interval,
}

/// A DCA's offer for one secondary interval. Injections are positive for
/// generation; a load's baseline is the lower end of its range (it can only
/// shed consumption).
#[derive(Debug, Clone, PartialEq)]
pub struct DcaBid {
    pub dca: String,
    pub smo: String,
    pub kind_p: DcaKind,
    pub kind_q: DcaKind,
    pub phases: Vec<DcaPhaseBid>,
    pub commitment: f64,
    pub beta_p: f64,
    pub beta_q: f64,
}

impl DcaBid {
    pub fn phase(&self, p: Phase) -> Option<&DcaPhaseBid> {
        self.phases.iter().find(|b| b.phase == p)
    }

    pub fn validate(&self) -> Result<(), SmError> {
        let bad = |reason: String| SmError::InvalidBid {
            dca: self.dca.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.commitment) {
            return Err(bad(format!("commitment score {} outside [0, 1]", self.commitment)));
        }
        for (name, b) in [("beta_p", self.beta_p), ("beta_q", self.beta_q)] {
            if !(b.is_finite() && b > 0.0) {
                return Err(bad(format!("{name} = {b} must be positive")));
            }
        }
        let mut seen = Vec::new();
        for ph in &self.phases {
            if seen.contains(&ph.phase) {
                return Err(bad(format!("phase {} listed twice", ph.phase)));
            }
            seen.push(ph.phase);
            for (what, kind, base, r) in [
                ("P", self.kind_p, ph.p0, ph.p_range),
                ("Q", self.kind_q, ph.q0, ph.q_range),
            ] {
                let tol = 1e-12 * (1.0 + base.abs());
                if !(base.is_finite() && r.lo.is_finite() && r.hi.is_finite()) {
                    return Err(bad(format!("phase {} {what} bid is not finite", ph.phase)));
                }
                if r.is_empty() || base < r.lo - tol || base > r.hi + tol {
                    return Err(bad(format!(
                        "phase {} {what} range {r} does not contain baseline {base}",
                        ph.phase
                    )));
                }
                if kind == DcaKind::Load && (r.lo - base).abs() > tol {
                    return Err(bad(format!(
                        "load phase {} {what} range {r} must start at its baseline {base}",
                        ph.phase
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Primary-market outcome handed to one SMO.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSetpoint {
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
    /// Primary-market prices at the SMO's node-phase, $/kWh and $/kVARh.
    pub mu_p: f64,
    pub mu_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmSetpoint {
    /// Minute of the primary clearing the setpoint comes from.
    pub time: f64,
    pub phases: Vec<PhaseSetpoint>,
}

impl PmSetpoint {
    pub fn phase(&self, p: Phase) -> Option<&PhaseSetpoint> {
        self.phases.iter().find(|s| s.phase == p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcaPhaseSchedule {
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
    pub delta_p: f64,
    pub delta_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaSchedule {
    pub dca: String,
    pub kind_p: DcaKind,
    pub kind_q: DcaKind,
    pub commitment: f64,
    pub beta_p: f64,
    pub beta_q: f64,
    pub phases: Vec<DcaPhaseSchedule>,
}

impl DcaSchedule {
    /// Net active injection summed over the DCA's phases.
    pub fn net_p(&self) -> f64 {
        self.phases.iter().map(|p| p.p).sum()
    }

    pub fn net_q(&self) -> f64 {
        self.phases.iter().map(|p| p.q).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmClearingResult {
    pub smo: String,
    pub setpoint: PmSetpoint,
    pub schedules: Vec<DcaSchedule>,
    /// One record per stage, in ranking order.
    pub stages: Vec<StageRecord>,
    pub literal_f1: Option<LiteralF1>,
}

impl SmClearingResult {
    pub fn stage_optima(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.optimum).collect()
    }
}

#[derive(Debug, Error)]
pub enum SmError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("bid of DCA `{dca}` is invalid: {reason}")]
    InvalidBid { dca: String, reason: String },
    #[error("DCA `{dca}` belongs to SMO `{bid_smo}`, not `{smo}`")]
    WrongSmo {
        dca: String,
        bid_smo: String,
        smo: String,
    },
    #[error("DCA `{dca}` bids on phase {phase}, which the setpoint does not cover")]
    UncoveredPhase { dca: String, phase: Phase },
    #[error(
        "{commodity} balance on phase {phase} is infeasible: setpoint {setpoint} outside the DCA range {range}"
    )]
    InfeasibleBalance {
        commodity: char,
        phase: Phase,
        setpoint: f64,
        range: Interval,
    },
    #[error("stage {stage} solve ended with status {status}")]
    Unsolved { stage: Stage, status: SolveStatus },
    #[error("no secondary clearing to aggregate")]
    NothingToAggregate,
    #[error("invalid setting: {0}")]
    BadSettings(String),
}

/// Per-phase Minkowski sum of the DCAs' P and Q ranges.
pub fn minkowski_range(bids: &[DcaBid], phase: Phase) -> (Interval, Interval) {
    let mut p = Interval::point(0.0);
    let mut q = Interval::point(0.0);
    for b in bids {
        if let Some(ph) = b.phase(phase) {
            p = p + ph.p_range;
            q = q + ph.q_range;
        }
    }
    (p, q)
}

/// Builds an SMO's primary-market bid from the most recent secondary
/// clearing among `results`: baselines are summed setpoints and ranges are
/// the summed symmetric flexibility around them.
pub fn aggregate_smo_bid(
    results: &[SmClearingResult],
    bus: &str,
    alpha_p: f64,
    alpha_q: f64,
) -> Result<SmoBid, SmError> {
    let last = results.last().ok_or(SmError::NothingToAggregate)?;
    let mut phases = Vec::new();
    for sp in &last.setpoint.phases {
        let mut pb = PhaseBid::zero(sp.phase);
        let (mut plo, mut phi, mut qlo, mut qhi) = (0.0, 0.0, 0.0, 0.0);
        for s in &last.schedules {
            let Some(x) = s.phases.iter().find(|x| x.phase == sp.phase) else {
                continue;
            };
            pb.p0 += x.p;
            pb.q0 += x.q;
            plo += x.p - x.delta_p;
            phi += x.p + x.delta_p;
            qlo += x.q - x.delta_q;
            qhi += x.q + x.delta_q;
            if s.kind_p == DcaKind::Load {
                pb.p_load0 += x.p;
            }
            if s.kind_q == DcaKind::Load {
                pb.q_load0 += x.q;
            }
        }
        pb.p_range = Interval::new(plo, phi);
        pb.q_range = Interval::new(qlo, qhi);
        phases.push(pb);
    }
    let n = last.schedules.len().max(1) as f64;
    Ok(SmoBid {
        smo: last.smo.clone(),
        bus: bus.to_string(),
        phases,
        alpha_p,
        alpha_q,
        beta_p: last.schedules.iter().map(|s| s.beta_p).sum::<f64>() / n,
        beta_q: last.schedules.iter().map(|s| s.beta_q).sum::<f64>() / n,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    fn sched(dca: &str, p: f64, dp: f64, kind: DcaKind) -> DcaSchedule {
        DcaSchedule {
            dca: dca.into(),
            kind_p: kind,
            kind_q: kind,
            commitment: 1.0,
            beta_p: 0.5,
            beta_q: 0.5,
            phases: vec![DcaPhaseSchedule {
                phase: Phase::A,
                p,
                q: 0.0,
                delta_p: dp,
                delta_q: 0.0,
            }],
        }
    }

    #[test]
    fn aggregation_of_two_dcas() {
        let r = SmClearingResult {
            smo: "smo".into(),
            setpoint: fixtures::setpoint(-0.2, 0.0),
            schedules: vec![
                sched("g", 0.3, 0.1, DcaKind::Generator),
                sched("l", -0.5, 0.0, DcaKind::Load),
            ],
            stages: vec![],
            literal_f1: None,
        };
        let bid = aggregate_smo_bid(&[r], "1", 0.04, 0.01).unwrap();
        let a = &bid.phases[0];
        assert!((a.p0 + 0.2).abs() < 1e-15);
        assert!((a.p_range.lo + 0.3).abs() < 1e-15 && (a.p_range.hi + 0.1).abs() < 1e-15);
        assert_eq!(a.p_load0, -0.5);
        assert!(bid.validate().is_ok());
    }

    #[test]
    fn nothing_to_aggregate() {
        assert!(matches!(
            aggregate_smo_bid(&[], "1", 0.0, 0.0),
            Err(SmError::NothingToAggregate)
        ));
    }

    #[test]
    fn load_range_must_start_at_baseline() {
        let mut b = fixtures::single_phase("l", DcaKind::Load, -1.0, (-1.0, -0.8), 0.5, 0.5);
        assert!(b.validate().is_ok());
        b.phases[0].p_range = Interval::new(-1.1, -0.8);
        assert!(b.validate().is_err());
    }
}
