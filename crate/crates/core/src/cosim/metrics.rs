use super::{MarketLog, Scenario};
use crate::network::Phase;

/// Voltage magnitudes at one node-phase and primary interval.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageRow {
    pub time: u32,
    pub bus: String,
    pub phase: Phase,
    /// From the primary-market solution.
    pub v_lem: f64,
    /// Power flow on the raw baselines.
    pub v_no_lem: Option<f64>,
    /// Power flow on the cleared injections.
    pub v_realized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub voltages: Vec<VoltageRow>,
    /// Per primary interval: mean |V| over node-phases.
    pub spatial_mean_lem: Vec<f64>,
    pub spatial_mean_no_lem: Vec<Option<f64>>,
    pub mean_v_lem: f64,
    /// `None` unless every interval has a no-market power flow.
    pub mean_v_no_lem: Option<f64>,
    pub mean_dev_lem: f64,
    pub mean_dev_no_lem: Option<f64>,
    /// Node-phase samples outside the voltage limits.
    pub violations_lem: usize,
    pub violations_no_lem: Option<usize>,
    /// Means over node-phases and time of the price components.
    pub mean_lambda_p: f64,
    pub mean_lambda_q: f64,
    pub mean_lambda_v_bar: f64,
    /// Mean equivalent rate over (bus, time) samples where it is defined.
    pub mean_lambda_eq: Option<f64>,
    pub pm_clearings: usize,
    pub sm_clearings: usize,
    pub max_balance_error: f64,
    pub max_bilinear_gap: f64,
    pub completed: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn compute_metrics(log: &MarketLog, scenario: &Scenario) -> Metrics {
    let net = &scenario.network;
    let (vmin, vmax) = scenario.market.v_limits;
    let outside = |v: f64| v < vmin || v > vmax;
    let mut voltages = Vec::new();
    for rec in &log.pm {
        for (k, np) in net.node_phases().iter().enumerate() {
            voltages.push(VoltageRow {
                time: rec.time,
                bus: net.buses()[np.bus].id.clone(),
                phase: np.phase,
                v_lem: rec.solution.nodes[k].v().norm(),
                v_no_lem: rec.no_lem.as_ref().map(|s| s.v[k].norm()),
                v_realized: rec.realized.as_ref().map(|s| s.v[k].norm()),
            });
        }
    }
    let n = net.num_node_phases();
    let spatial_mean_lem: Vec<f64> = voltages
        .chunks(n)
        .map(|c| mean(c.iter().map(|r| r.v_lem)).unwrap_or(0.0))
        .collect();
    let spatial_mean_no_lem: Vec<Option<f64>> = voltages
        .chunks(n)
        .map(|c| c.iter().map(|r| r.v_no_lem).collect::<Option<Vec<_>>>().and_then(|v| mean(v.into_iter())))
        .collect();
    let no_lem: Option<Vec<f64>> = voltages.iter().map(|r| r.v_no_lem).collect();
    let no_lem = no_lem.filter(|v| !v.is_empty());

    let phases = log.pm.iter().flat_map(|r| &r.dlmp.node_phases);
    let mean_of = |f: fn(&crate::primary::NodePhaseDlmp) -> f64| mean(phases.clone().map(f)).unwrap_or(0.0);

    Metrics {
        spatial_mean_lem,
        spatial_mean_no_lem,
        mean_v_lem: mean(voltages.iter().map(|r| r.v_lem)).unwrap_or(0.0),
        mean_v_no_lem: no_lem.as_ref().and_then(|v| mean(v.iter().copied())),
        mean_dev_lem: mean(voltages.iter().map(|r| (r.v_lem - 1.0).abs())).unwrap_or(0.0),
        mean_dev_no_lem: no_lem.as_ref().and_then(|v| mean(v.iter().map(|x| (x - 1.0).abs()))),
        violations_lem: voltages.iter().filter(|r| outside(r.v_lem)).count(),
        violations_no_lem: no_lem.as_ref().map(|v| v.iter().filter(|&&x| outside(x)).count()),
        mean_lambda_p: mean_of(|d| d.lambda_p),
        mean_lambda_q: mean_of(|d| d.lambda_q),
        mean_lambda_v_bar: mean_of(|d| d.lambda_v_bar),
        mean_lambda_eq: mean(log.pm.iter().flat_map(|r| r.dlmp.nodes.iter().filter_map(|d| d.lambda_eq))),
        pm_clearings: log.pm.len(),
        sm_clearings: log.sm.len(),
        max_balance_error: log.sm.iter().map(|r| r.balance_error).fold(0.0, f64::max),
        max_bilinear_gap: log.pm.iter().map(|r| r.gap.max_bilinear).fold(0.0, f64::max),
        completed: log.completed(),
        voltages,
    }
}
