//! Ex-post retail tariffs that pass the SMO's primary-market revenue on to
//! its DCAs.
//!
//! DCAs are sorted per commodity into generators (positive injection) and
//! loads (negative). With `R` the SMO's primary-market revenue, the DCA's
//! cash flow for one commodity is `y·|R|`, paid by loads and received by
//! generators. Every commodity moves `|R| / 2` in total: into the SMO when it
//! has both generators and loads (so the SMO recovers `|R|` when both
//! commodities do), out of it when it has only generators, and into it when
//! it has only loads.

use super::{PmSetpoint, SmClearingResult};
use crate::primary::energy_value;

/// Indices into `SmClearingResult::schedules`, per commodity and role.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommoditySets {
    pub gen_p: Vec<usize>,
    pub load_p: Vec<usize>,
    pub gen_q: Vec<usize>,
    pub load_q: Vec<usize>,
}

/// Classifies each DCA by the sign of its cleared net injection. A DCA with
/// zero net injection of a commodity is in neither set for it.
pub fn classify_commodity_sets(result: &SmClearingResult) -> CommoditySets {
    let mut sets = CommoditySets::default();
    for (j, s) in result.schedules.iter().enumerate() {
        let (p, q) = (s.net_p(), s.net_q());
        if p > 0.0 {
            sets.gen_p.push(j);
        } else if p < 0.0 {
            sets.load_p.push(j);
        }
        if q > 0.0 {
            sets.gen_q.push(j);
        } else if q < 0.0 {
            sets.load_q.push(j);
        }
    }
    sets
}

/// Per-generator multiplier for one commodity.
pub fn generator_multiplier(n_gen: usize, n_load: usize) -> f64 {
    match (n_gen, n_load) {
        (0, _) => 0.0,
        (g, 0) => 1.0 / (2.0 * g as f64),
        _ => 1.0,
    }
}

/// Per-load multiplier for one commodity.
pub fn load_multiplier(n_gen: usize, n_load: usize) -> f64 {
    match (n_gen, n_load) {
        (_, 0) => 0.0,
        (0, l) => 1.0 / (2.0 * l as f64),
        (g, l) => (1.0 + 2.0 * g as f64) / (2.0 * l as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceMultipliers {
    pub y_p: Vec<f64>,
    pub y_q: Vec<f64>,
}

pub fn compute_price_multipliers(sets: &CommoditySets, n_dcas: usize) -> PriceMultipliers {
    let fill = |gens: &[usize], loads: &[usize]| {
        let mut y = vec![0.0; n_dcas];
        let (g, l) = (generator_multiplier(gens.len(), loads.len()), load_multiplier(gens.len(), loads.len()));
        for &j in gens {
            y[j] = g;
        }
        for &j in loads {
            y[j] = l;
        }
        y
    };
    PriceMultipliers {
        y_p: fill(&sets.gen_p, &sets.load_p),
        y_q: fill(&sets.gen_q, &sets.load_q),
    }
}

/// Revenue of the SMO in the primary market over one primary interval, in
/// dollars: `Σ_φ (μP·P + μQ·Q)` times the interval length.
pub fn pm_revenue(setpoint: &PmSetpoint, dt_p_hours: f64, s_base: f64) -> f64 {
    setpoint
        .phases
        .iter()
        .map(|s| energy_value(s.mu_p, s.p, s_base, dt_p_hours) + energy_value(s.mu_q, s.q, s_base, dt_p_hours))
        .sum()
}

/// `y·|R| / (|P|·Δt)` in $/kWh, with `p_kw` in kW and `dt_s_hours` in hours.
/// Zero when the DCA has no net injection.
pub fn retail_tariff(y: f64, revenue: f64, p_kw: f64, dt_s_hours: f64) -> f64 {
    if p_kw == 0.0 || y == 0.0 {
        return 0.0;
    }
    y * revenue.abs() / (p_kw.abs() * dt_s_hours)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaTariff {
    pub dca: String,
    pub y_p: f64,
    pub y_q: f64,
    /// $/kWh and $/kVARh.
    pub mu_p: f64,
    pub mu_q: f64,
    /// Dollars paid to the SMO per commodity; negative when the DCA is paid.
    pub cash_p: f64,
    pub cash_q: f64,
}

impl DcaTariff {
    pub fn cash(&self) -> f64 {
        self.cash_p + self.cash_q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetailTariffs {
    pub revenue: f64,
    pub tariffs: Vec<DcaTariff>,
}

impl RetailTariffs {
    /// Net dollars the SMO collects from its DCAs.
    pub fn net_cash(&self) -> f64 {
        self.tariffs.iter().map(DcaTariff::cash).sum()
    }

    /// `net_cash − |R|`; zero when every commodity has both generators and
    /// loads.
    pub fn budget_residual(&self) -> f64 {
        self.net_cash() - self.revenue.abs()
    }
}

pub fn compute_retail_tariffs(
    result: &SmClearingResult,
    sets: &CommoditySets,
    setpoint: &PmSetpoint,
    dt_s_hours: f64,
    dt_p_hours: f64,
    s_base: f64,
) -> RetailTariffs {
    let revenue = pm_revenue(setpoint, dt_p_hours, s_base);
    let y = compute_price_multipliers(sets, result.schedules.len());
    let kw = crate::primary::kw_per_pu(s_base);
    let tariffs = result
        .schedules
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let (p_kw, q_kw) = (s.net_p() * kw, s.net_q() * kw);
            let mu_p = retail_tariff(y.y_p[j], revenue, p_kw, dt_s_hours);
            let mu_q = retail_tariff(y.y_q[j], revenue, q_kw, dt_s_hours);
            // Loads (negative injection) pay, generators are paid.
            let cash = |mu: f64, x_kw: f64| -mu * x_kw * dt_s_hours;
            DcaTariff {
                dca: s.dca.clone(),
                y_p: y.y_p[j],
                y_q: y.y_q[j],
                mu_p,
                mu_q,
                cash_p: cash(mu_p, p_kw),
                cash_q: cash(mu_q, q_kw),
            }
        })
        .collect();
    RetailTariffs { revenue, tariffs }
}
