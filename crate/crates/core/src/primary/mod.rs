//! Primary market: McCormick-relaxed current-injection OPF over SMO bids,
//! with prices read off the equality duals.
//!
//! The program is posed in the phase-aligned frame (see
//! [`ThreePhaseNetwork::align`]): every phase's nominal angle is rotated to
//! zero, so the regulation target is `1 + j0` on all phases and the angle
//! window is a box around the real axis.
//!
//! Objective coefficients are in $/kWh per p.u. of power, so the equality
//! duals on the P and Q definition rows are prices in $/kWh (and $/kVARh)
//! directly. Converting a p.u. schedule into money goes through
//! [`energy_value`].

mod bounds;
mod ciopf;
mod dlmp;
mod mccormick;

use thiserror::Error;

use crate::convex::{ProgramError, SolveStatus};
use crate::network::{NetworkError, Phase, ThreePhaseNetwork};

pub use bounds::{preprocess_bounds, NodeBox, VarBounds};
pub use ciopf::{
    assemble_ciopf, solve_pm, BranchFlow, CiOpf, CiOpfSolution, NodeRows, NodeSolution, NodeVars,
    ObjectiveBreakdown,
};
pub use dlmp::{
    equivalent_rate, equivalent_rate_at, extract_dlmp, relaxation_gap, Dlmp, GapReport, NodeDlmp,
    NodePhaseDlmp,
};
pub use mccormick::{build_mce, CutSide, Envelope, EnvelopeCut, Interval};

/// One phase of an SMO's aggregate offer to the primary market.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBid {
    pub phase: Phase,
    pub p0: f64,
    pub q0: f64,
    pub p_range: Interval,
    pub q_range: Interval,
    /// Load part of the baseline (non-positive for consuming DCAs).
    pub p_load0: f64,
    pub q_load0: f64,
}

impl PhaseBid {
    /// Zero-injection, zero-flexibility bid.
    pub fn zero(phase: Phase) -> Self {
        Self {
            phase,
            p0: 0.0,
            q0: 0.0,
            p_range: Interval::point(0.0),
            q_range: Interval::point(0.0),
            p_load0: 0.0,
            q_load0: 0.0,
        }
    }

    /// Fixed injection with no flexibility.
    pub fn fixed(phase: Phase, p: f64, q: f64) -> Self {
        Self {
            phase,
            p0: p,
            q0: q,
            p_range: Interval::point(p),
            q_range: Interval::point(q),
            p_load0: p.min(0.0),
            q_load0: q.min(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoBid {
    pub smo: String,
    pub bus: String,
    pub phases: Vec<PhaseBid>,
    pub alpha_p: f64,
    pub alpha_q: f64,
    pub beta_p: f64,
    pub beta_q: f64,
}

impl SmoBid {
    pub fn phase(&self, p: Phase) -> Option<&PhaseBid> {
        self.phases.iter().find(|b| b.phase == p)
    }

    pub fn validate(&self) -> Result<(), PmError> {
        let bad = |reason: String| PmError::InvalidBid {
            smo: self.smo.clone(),
            reason,
        };
        for (name, v) in [
            ("alpha_p", self.alpha_p),
            ("alpha_q", self.alpha_q),
            ("beta_p", self.beta_p),
            ("beta_q", self.beta_q),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        for b in &self.phases {
            for (what, base, r) in [("P", b.p0, b.p_range), ("Q", b.q0, b.q_range)] {
                let tol = 1e-9 * (1.0 + base.abs());
                if !(r.lo.is_finite() && r.hi.is_finite() && base.is_finite()) {
                    return Err(bad(format!("phase {} {what} bid is not finite", b.phase)));
                }
                if r.is_empty() || base < r.lo - tol || base > r.hi + tol {
                    return Err(bad(format!(
                        "phase {} {what} range {r} does not contain baseline {base}",
                        b.phase
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Market weights of one primary clearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmWeights {
    /// Weight on losses plus voltage regulation.
    pub xi: f64,
    /// Wholesale prices at the point of common coupling, $/kWh and $/kVARh.
    pub lmp_p: f64,
    pub lmp_q: f64,
}

#[derive(Debug, Error)]
pub enum PmError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("no bid covers bus `{bus}` phase {phase}")]
    MissingBid { bus: String, phase: Phase },
    #[error("more than one bid covers bus `{bus}` phase {phase}")]
    DuplicateBid { bus: String, phase: Phase },
    #[error("bid of SMO `{smo}` targets unknown bus `{bus}`")]
    UnknownBus { smo: String, bus: String },
    #[error("bid of SMO `{smo}` is placed at the slack bus")]
    BidAtSlack { smo: String },
    #[error("bid of SMO `{smo}` is invalid: {reason}")]
    InvalidBid { smo: String, reason: String },
    #[error("invalid bound settings: {0}")]
    BadSettings(String),
    #[error("empty {quantity} bound at bus `{bus}` phase {phase}")]
    EmptyBounds {
        bus: String,
        phase: Phase,
        quantity: &'static str,
    },
    #[error("primary-market relaxation is {status}")]
    Unsolved {
        status: SolveStatus,
        bounds: Box<VarBounds>,
    },
}

/// kW represented by one p.u. of power.
pub fn kw_per_pu(s_base: f64) -> f64 {
    s_base / 1000.0
}

/// Money for holding `power_pu` for `hours` at `price` ($/kWh or $/kVARh).
pub fn energy_value(price: f64, power_pu: f64, s_base: f64, hours: f64) -> f64 {
    price * power_pu * kw_per_pu(s_base) * hours
}

/// Locates the bid phase for each node-phase, checking coverage.
pub(crate) fn bid_map<'a>(
    net: &ThreePhaseNetwork,
    bids: &'a [SmoBid],
) -> Result<Vec<Option<(&'a SmoBid, &'a PhaseBid)>>, PmError> {
    let mut map = vec![None; net.num_node_phases()];
    for bid in bids {
        bid.validate()?;
        let Some(bus) = net.bus_index(&bid.bus) else {
            return Err(PmError::UnknownBus {
                smo: bid.smo.clone(),
                bus: bid.bus.clone(),
            });
        };
        if bus == net.slack() {
            return Err(PmError::BidAtSlack {
                smo: bid.smo.clone(),
            });
        }
        for pb in &bid.phases {
            let Some(k) = net.node_phase_index(bus, pb.phase) else {
                return Err(PmError::InvalidBid {
                    smo: bid.smo.clone(),
                    reason: format!("bus `{}` has no phase {}", bid.bus, pb.phase),
                });
            };
            if map[k].is_some() {
                return Err(PmError::DuplicateBid {
                    bus: bid.bus.clone(),
                    phase: pb.phase,
                });
            }
            map[k] = Some((bid, pb));
        }
    }
    for (k, np) in net.node_phases().iter().enumerate() {
        if map[k].is_none() && !net.is_slack(*np) {
            return Err(PmError::MissingBid {
                bus: net.buses()[np.bus].id.clone(),
                phase: np.phase,
            });
        }
    }
    Ok(map)
}
