use std::collections::BTreeMap;

use thiserror::Error;

use crate::network::{Phase, ThreePhaseNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSpec {
    pub id: String,
    pub bus: String,
    /// Generation cost coefficients; default to 0.8 of the wholesale price.
    pub alpha_p: Option<f64>,
    pub alpha_q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcaPhaseSpec {
    pub phase: Phase,
    /// Nominal injection in p.u., scaled by the DCA's profile.
    pub p0: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaSpec {
    pub id: String,
    pub smo: String,
    pub phases: Vec<DcaPhaseSpec>,
    /// Name of the profile shaping the baseline over time.
    pub shape: String,
    pub commitment: f64,
    /// Disutility weights; drawn from U[0.1, 1] when absent.
    pub beta_p: Option<f64>,
    pub beta_q: Option<f64>,
}

/// Cadences and horizon are in whole minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    pub dt_s: u32,
    pub dt_p: u32,
    pub horizon: u32,
    pub xi: f64,
    pub epsilon: f64,
    pub v_limits: (f64, f64),
    pub theta_window_deg: f64,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            dt_s: 1,
            dt_p: 5,
            horizon: 60,
            xi: 1.0,
            epsilon: 0.05,
            v_limits: (0.95, 1.05),
            theta_window_deg: 15.0,
            seed: 0,
        }
    }
}

/// A complete co-simulation input. Profiles hold one multiplier per
/// secondary interval (a single value means constant); price series hold one
/// value per primary interval (likewise).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: ThreePhaseNetwork,
    pub smos: Vec<SmoSpec>,
    pub dcas: Vec<DcaSpec>,
    pub flexibility_range: (f64, f64),
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub lmp_p: Vec<f64>,
    pub lmp_q: Vec<f64>,
    pub market: MarketConfig,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("primary cadence {dt_p} min is not a positive multiple of secondary cadence {dt_s} min")]
    Cadence { dt_s: u32, dt_p: u32 },
    #[error("horizon {horizon} min is not a positive multiple of the primary cadence {dt_p} min")]
    Horizon { horizon: u32, dt_p: u32 },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("SMO `{smo}` sits at unknown bus `{bus}`")]
    UnknownBus { smo: String, bus: String },
    #[error("SMO `{0}` sits at the slack bus")]
    SmoAtSlack(String),
    #[error("DCA `{dca}` belongs to unknown SMO `{smo}`")]
    UnknownSmo { dca: String, smo: String },
    #[error("DCA `{dca}` uses unknown profile `{profile}`")]
    UnknownProfile { dca: String, profile: String },
    #[error("DCA `{dca}` bids on phase {phase}, absent at bus `{bus}`")]
    MissingPhase { dca: String, phase: Phase, bus: String },
    #[error("{what} has {len} values, the horizon needs {needed}")]
    ShortSeries {
        what: String,
        len: usize,
        needed: usize,
    },
    #[error("{field}: {reason}")]
    BadValue { field: String, reason: String },
}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::BadValue {
        field: field.into(),
        reason: reason.into(),
    }
}

impl Scenario {
    pub fn steps_per_pm(&self) -> usize {
        (self.market.dt_p / self.market.dt_s) as usize
    }

    pub fn num_pm_intervals(&self) -> usize {
        (self.market.horizon / self.market.dt_p) as usize
    }

    pub fn num_sm_steps(&self) -> usize {
        (self.market.horizon / self.market.dt_s) as usize
    }

    pub fn profile_at(&self, name: &str, step: usize) -> f64 {
        series_at(&self.profiles[name], step)
    }

    /// Wholesale (P, Q) prices of primary interval `k`.
    pub fn lmp_at(&self, k: usize) -> (f64, f64) {
        (series_at(&self.lmp_p, k), series_at(&self.lmp_q, k))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let m = &self.market;
        if m.dt_s == 0 || m.dt_p == 0 || !m.dt_p.is_multiple_of(m.dt_s) {
            return Err(ScenarioError::Cadence {
                dt_s: m.dt_s,
                dt_p: m.dt_p,
            });
        }
        if m.horizon == 0 || !m.horizon.is_multiple_of(m.dt_p) {
            return Err(ScenarioError::Horizon {
                horizon: m.horizon,
                dt_p: m.dt_p,
            });
        }
        if !(m.xi.is_finite() && m.xi >= 0.0) {
            return Err(bad("market.xi", "must be finite and non-negative"));
        }
        if !(m.epsilon.is_finite() && m.epsilon >= 0.0) {
            return Err(bad("market.epsilon", "must be finite and non-negative"));
        }
        let (vmin, vmax) = m.v_limits;
        if !(vmin > 0.0 && vmin <= vmax && vmax.is_finite()) {
            return Err(bad("market.v_limits", "need 0 < min <= max"));
        }
        if !(0.0..90.0).contains(&m.theta_window_deg) {
            return Err(bad("market.theta_window_deg", "must lie in [0, 90)"));
        }
        let (lo, hi) = self.flexibility_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(bad("population.flexibility_range", "need 0 <= lo <= hi < 1"));
        }

        let net = &self.network;
        let mut seen = Vec::new();
        for s in &self.smos {
            if seen.contains(&&s.id) {
                return Err(ScenarioError::Duplicate {
                    kind: "SMO",
                    id: s.id.clone(),
                });
            }
            seen.push(&s.id);
            let Some(b) = net.bus_index(&s.bus) else {
                return Err(ScenarioError::UnknownBus {
                    smo: s.id.clone(),
                    bus: s.bus.clone(),
                });
            };
            if b == net.slack() {
                return Err(ScenarioError::SmoAtSlack(s.id.clone()));
            }
            if self.smos.iter().filter(|o| o.bus == s.bus).count() > 1 {
                return Err(bad(format!("smo {}", s.id), format!("bus `{}` hosts more than one SMO", s.bus)));
            }
            for (name, a) in [("alpha_p", s.alpha_p), ("alpha_q", s.alpha_q)] {
                if a.is_some_and(|a| !(a.is_finite() && a >= 0.0)) {
                    return Err(bad(format!("smo {}.{name}", s.id), "must be finite and non-negative"));
                }
            }
        }

        let steps = self.num_sm_steps();
        for (name, values) in &self.profiles {
            check_series(&format!("profile `{name}`"), values, steps)?;
            if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(bad(format!("profile `{name}`"), "multipliers must be finite and non-negative"));
            }
        }
        let pms = self.num_pm_intervals();
        check_series("prices.lmp_p", &self.lmp_p, pms)?;
        check_series("prices.lmp_q", &self.lmp_q, pms)?;
        if self.lmp_p.iter().chain(&self.lmp_q).any(|v| !v.is_finite()) {
            return Err(bad("prices", "must be finite"));
        }

        let mut seen = Vec::new();
        for d in &self.dcas {
            if seen.contains(&&d.id) {
                return Err(ScenarioError::Duplicate {
                    kind: "DCA",
                    id: d.id.clone(),
                });
            }
            seen.push(&d.id);
            let Some(smo) = self.smos.iter().find(|s| s.id == d.smo) else {
                return Err(ScenarioError::UnknownSmo {
                    dca: d.id.clone(),
                    smo: d.smo.clone(),
                });
            };
            if !self.profiles.contains_key(&d.shape) {
                return Err(ScenarioError::UnknownProfile {
                    dca: d.id.clone(),
                    profile: d.shape.clone(),
                });
            }
            let bus = &net.buses()[net.bus_index(&smo.bus).expect("checked above")];
            let mut phases = Vec::new();
            for ph in &d.phases {
                if !bus.phases.contains(ph.phase) {
                    return Err(ScenarioError::MissingPhase {
                        dca: d.id.clone(),
                        phase: ph.phase,
                        bus: bus.id.clone(),
                    });
                }
                if phases.contains(&ph.phase) {
                    return Err(bad(format!("dca {}", d.id), format!("phase {} listed twice", ph.phase)));
                }
                phases.push(ph.phase);
                if !(ph.p0.is_finite() && ph.q0.is_finite()) {
                    return Err(bad(format!("dca {}", d.id), "baseline must be finite"));
                }
            }
            if d.phases.is_empty() {
                return Err(bad(format!("dca {}", d.id), "needs at least one phase"));
            }
            if !(0.0..=1.0).contains(&d.commitment) {
                return Err(bad(format!("dca {}.commitment", d.id), "must lie in [0, 1]"));
            }
            for (name, b) in [("beta_p", d.beta_p), ("beta_q", d.beta_q)] {
                if b.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
                    return Err(bad(format!("dca {}.{name}", d.id), "must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn series_at(values: &[f64], k: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[k]
    }
}

fn check_series(what: &str, values: &[f64], needed: usize) -> Result<(), ScenarioError> {
    if values.len() == 1 || values.len() >= needed {
        Ok(())
    } else {
        Err(ScenarioError::ShortSeries {
            what: what.to_string(),
            len: values.len(),
            needed,
        })
    }
}
