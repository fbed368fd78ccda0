//! Two-cadence co-simulation: every secondary interval each SMO schedules its
//! DCAs against the latest primary setpoint; every primary interval the SMOs'
//! aggregated schedules are re-offered and the primary market is re-cleared.

mod metrics;
mod scenario;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::powerflow::{power_flow_oracle, PowerFlowSolution};
use crate::primary::{
    assemble_ciopf, extract_dlmp, preprocess_bounds, relaxation_gap, solve_pm, CiOpfSolution,
    Dlmp, GapReport, Interval, PhaseBid, PmWeights, SmoBid,
};
use crate::secondary::{
    aggregate_smo_bid, classify_commodity_sets, clear_sm_with, compute_retail_tariffs,
    minkowski_range, DcaBid, DcaKind, DcaPhaseBid, PhaseSetpoint, PmSetpoint, RetailTariffs,
    SmClearingResult, SmSettings,
};

pub use metrics::{compute_metrics, Metrics, VoltageRow};
pub use scenario::{DcaPhaseSpec, DcaSpec, MarketConfig, Scenario, ScenarioError, SmoSpec};

/// Range of a DCA phase with baseline `base` and flexibility `fraction`.
/// Loads (negative baselines) may only shed, so their range starts at the
/// baseline.
pub fn flexible_range(kind: DcaKind, base: f64, fraction: f64) -> Interval {
    let w = fraction * base.abs();
    match kind {
        DcaKind::Load => Interval::new(base, base + w),
        DcaKind::Generator => Interval::new(base - w, base + w),
    }
}

/// Flexibility fractions and disutility weights drawn once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// Per DCA, per listed phase: (P fraction, Q fraction).
    pub fractions: Vec<Vec<(f64, f64)>>,
    /// Per DCA: (βP, βQ).
    pub betas: Vec<(f64, f64)>,
}

impl Population {
    pub fn draw(scenario: &Scenario) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.market.seed);
        let (lo, hi) = scenario.flexibility_range;
        let mut fractions = Vec::with_capacity(scenario.dcas.len());
        let mut betas = Vec::with_capacity(scenario.dcas.len());
        for d in &scenario.dcas {
            fractions.push(
                d.phases
                    .iter()
                    .map(|_| (rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
                    .collect(),
            );
            // Always drawn so that supplying one DCA's weights does not shift
            // the stream for the others.
            let bp: f64 = rng.random_range(0.1..=1.0);
            let bq: f64 = rng.random_range(0.1..=1.0);
            betas.push((d.beta_p.unwrap_or(bp), d.beta_q.unwrap_or(bq)));
        }
        Self { fractions, betas }
    }
}

fn kind_of(total: f64) -> DcaKind {
    if total < 0.0 {
        DcaKind::Load
    } else {
        DcaKind::Generator
    }
}

/// DCA bids for every secondary interval of the horizon, indexed
/// `[step][dca]`. Deterministic in the scenario seed.
pub fn generate_synthetic_bids(scenario: &Scenario) -> Result<Vec<Vec<DcaBid>>, ScenarioError> {
    scenario.validate()?;
    let pop = Population::draw(scenario);
    Ok((0..scenario.num_sm_steps())
        .map(|s| bids_at(scenario, &pop, s))
        .collect())
}

fn bids_at(scenario: &Scenario, pop: &Population, step: usize) -> Vec<DcaBid> {
    scenario
        .dcas
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let shape = scenario.profile_at(&d.shape, step);
            let kind_p = kind_of(d.phases.iter().map(|p| p.p0).sum());
            let kind_q = kind_of(d.phases.iter().map(|p| p.q0).sum());
            let phases = d
                .phases
                .iter()
                .zip(&pop.fractions[j])
                .map(|(ph, &(fp, fq))| {
                    let (p0, q0) = (ph.p0 * shape, ph.q0 * shape);
                    DcaPhaseBid {
                        phase: ph.phase,
                        p0,
                        q0,
                        p_range: flexible_range(kind_p, p0, fp),
                        q_range: flexible_range(kind_q, q0, fq),
                    }
                })
                .collect();
            DcaBid {
                dca: d.id.clone(),
                smo: d.smo.clone(),
                kind_p,
                kind_q,
                phases,
                commitment: d.commitment,
                beta_p: pop.betas[j].0,
                beta_q: pop.betas[j].1,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmRecord {
    pub index: usize,
    /// Minutes from the start of the horizon.
    pub time: u32,
    pub bids: Vec<SmoBid>,
    pub solution: CiOpfSolution,
    pub dlmp: Dlmp,
    pub gap: GapReport,
    /// Power flow on the raw baselines (no market), if requested and solved.
    pub no_lem: Option<PowerFlowSolution>,
    /// Power flow on the cleared injections, if it converged.
    pub realized: Option<PowerFlowSolution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmRecord {
    pub step: usize,
    pub time: u32,
    /// Index into `MarketLog::pm` of the clearing this one follows.
    pub pm_index: usize,
    pub smo: String,
    pub result: SmClearingResult,
    pub tariffs: RetailTariffs,
    /// Largest per-phase `|Σ_j P_j − P*|` or `|Σ_j Q_j − Q*|`.
    pub balance_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltKind {
    /// No SMO offer can serve every secondary interval of the upcoming
    /// primary interval.
    Bids,
    Primary,
    Secondary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Halt {
    pub kind: HaltKind,
    pub time: u32,
    pub smo: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketLog {
    pub pm: Vec<PmRecord>,
    pub sm: Vec<SmRecord>,
    pub halt: Option<Halt>,
}

impl MarketLog {
    pub fn completed(&self) -> bool {
        self.halt.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Solve the no-market power flow every primary interval.
    pub no_lem_baseline: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            no_lem_baseline: true,
        }
    }
}

pub fn run(scenario: &Scenario) -> Result<MarketLog, ScenarioError> {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, opts: RunOptions) -> Result<MarketLog, ScenarioError> {
    scenario.validate()?;
    let net = &scenario.network;
    let m = &scenario.market;
    let pop = Population::draw(scenario);
    let steps = scenario.steps_per_pm();
    let sm_settings = SmSettings {
        epsilon: m.epsilon,
        ..SmSettings::default()
    };
    let mut log = MarketLog::default();
    let mut last_sm: Vec<Option<SmClearingResult>> = vec![None; scenario.smos.len()];

    for k in 0..scenario.num_pm_intervals() {
        let t_p = k as u32 * m.dt_p;
        let window: Vec<Vec<DcaBid>> = (k * steps..(k + 1) * steps)
            .map(|s| bids_at(scenario, &pop, s))
            .collect();
        let (lmp_p, lmp_q) = scenario.lmp_at(k);

        // (i) SMO offers.
        let mut bids = Vec::new();
        for (i, smo) in scenario.smos.iter().enumerate() {
            let own: Vec<Vec<DcaBid>> = window
                .iter()
                .map(|b| b.iter().filter(|d| d.smo == smo.id).cloned().collect())
                .collect();
            let alpha_p = smo.alpha_p.unwrap_or(0.8 * lmp_p);
            let alpha_q = smo.alpha_q.unwrap_or(0.8 * lmp_q);
            let bus = net.bus_index(&smo.bus).expect("validated bus");
            let phases: Vec<_> = net.buses()[bus].phases.iter().collect();
            let offer = match &last_sm[i] {
                Some(r) => aggregate_smo_bid(std::slice::from_ref(r), &smo.bus, alpha_p, alpha_q)
                    .expect("one result"),
                None => bootstrap_bid(&smo.id, &smo.bus, &phases, &own[0], alpha_p, alpha_q),
            };
            match fit_to_window(offer, &own) {
                Ok(b) => bids.push(b),
                Err(message) => {
                    log.halt = Some(Halt {
                        kind: HaltKind::Bids,
                        time: t_p,
                        smo: Some(smo.id.clone()),
                        message,
                    });
                    return Ok(log);
                }
            }
        }
        // Buses without an SMO neither inject nor offer flexibility.
        for (b, bus) in net.buses().iter().enumerate() {
            if b == net.slack() || scenario.smos.iter().any(|s| s.bus == bus.id) {
                continue;
            }
            bids.push(SmoBid {
                smo: format!("bus:{}", bus.id),
                bus: bus.id.clone(),
                phases: bus.phases.iter().map(PhaseBid::zero).collect(),
                alpha_p: 0.0,
                alpha_q: 0.0,
                beta_p: 0.0,
                beta_q: 0.0,
            });
        }

        // (ii)-(iii) bounds and primary clearing.
        let weights = PmWeights {
            xi: m.xi,
            lmp_p,
            lmp_q,
        };
        let cleared = preprocess_bounds(net, &bids, m.theta_window_deg.to_radians(), m.v_limits)
            .and_then(|bounds| assemble_ciopf(net, &bids, &bounds, weights))
            .and_then(|opf| solve_pm(&opf).map(|sol| (sol, opf.y)));
        let (solution, y) = match cleared {
            Ok(x) => x,
            Err(e) => {
                log.halt = Some(Halt {
                    kind: HaltKind::Primary,
                    time: t_p,
                    smo: None,
                    message: e.to_string(),
                });
                return Ok(log);
            }
        };
        let dlmp = extract_dlmp(&solution, &y);
        let gap = relaxation_gap(&solution, net);
        let no_lem = if opts.no_lem_baseline {
            power_flow_oracle(net, &baseline_injections(scenario, &window[0])).ok()
        } else {
            None
        };
        let cleared_s: Vec<Complex64> = solution.nodes.iter().map(|n| Complex64::new(n.p, n.q)).collect();
        let realized = power_flow_oracle(net, &cleared_s).ok();

        let setpoints: Vec<PmSetpoint> = scenario
            .smos
            .iter()
            .zip(&bids)
            .map(|(smo, bid)| {
                let bus = net.bus_index(&smo.bus).expect("validated bus");
                PmSetpoint {
                    time: t_p as f64,
                    phases: bid
                        .phases
                        .iter()
                        .map(|pb| {
                            let np = net.node_phase_index(bus, pb.phase).expect("bus phase");
                            let n = &solution.nodes[np];
                            PhaseSetpoint {
                                phase: pb.phase,
                                // Rounding can leave the solver a hair outside
                                // the offer; the offer is what the DCAs can meet.
                                p: n.p.clamp(pb.p_range.lo, pb.p_range.hi),
                                q: n.q.clamp(pb.q_range.lo, pb.q_range.hi),
                                mu_p: n.lambda_p,
                                mu_q: n.lambda_q,
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        let pm_index = log.pm.len();
        log.pm.push(PmRecord {
            index: k,
            time: t_p,
            bids,
            solution,
            dlmp,
            gap,
            no_lem,
            realized,
        });

        // (iv) secondary clearings against the fresh setpoints.
        for (w, step_bids) in window.iter().enumerate() {
            let step = k * steps + w;
            let t_s = step as u32 * m.dt_s;
            for (i, smo) in scenario.smos.iter().enumerate() {
                let own: Vec<DcaBid> = step_bids.iter().filter(|d| d.smo == smo.id).cloned().collect();
                let sp = &setpoints[i];
                let result = match clear_sm_with(&smo.id, &own, sp, &sm_settings) {
                    Ok(r) => r,
                    Err(e) => {
                        log.halt = Some(Halt {
                            kind: HaltKind::Secondary,
                            time: t_s,
                            smo: Some(smo.id.clone()),
                            message: e.to_string(),
                        });
                        return Ok(log);
                    }
                };
                let sets = classify_commodity_sets(&result);
                let tariffs = compute_retail_tariffs(
                    &result,
                    &sets,
                    sp,
                    m.dt_s as f64 / 60.0,
                    m.dt_p as f64 / 60.0,
                    net.s_base(),
                );
                let balance_error = balance_error(&result);
                log.sm.push(SmRecord {
                    step,
                    time: t_s,
                    pm_index,
                    smo: smo.id.clone(),
                    result: result.clone(),
                    tariffs,
                    balance_error,
                });
                last_sm[i] = Some(result);
            }
        }
    }
    Ok(log)
}

/// First-interval offer, built from the DCAs' own bids since no secondary
/// clearing exists yet.
fn bootstrap_bid(
    smo: &str,
    bus: &str,
    phases: &[crate::network::Phase],
    dcas: &[DcaBid],
    alpha_p: f64,
    alpha_q: f64,
) -> SmoBid {
    let phases = phases
        .iter()
        .map(|&ph| {
            let mut pb = PhaseBid::zero(ph);
            let (pr, qr) = minkowski_range(dcas, ph);
            pb.p_range = pr;
            pb.q_range = qr;
            for d in dcas {
                if let Some(x) = d.phase(ph) {
                    pb.p0 += x.p0;
                    pb.q0 += x.q0;
                    if d.kind_p == DcaKind::Load {
                        pb.p_load0 += x.p0;
                    }
                    if d.kind_q == DcaKind::Load {
                        pb.q_load0 += x.q0;
                    }
                }
            }
            pb
        })
        .collect();
    let n = dcas.len().max(1) as f64;
    SmoBid {
        smo: smo.to_string(),
        bus: bus.to_string(),
        phases,
        alpha_p,
        alpha_q,
        beta_p: dcas.iter().map(|d| d.beta_p).sum::<f64>() / n,
        beta_q: dcas.iter().map(|d| d.beta_q).sum::<f64>() / n,
    }
}

/// Restricts an SMO offer to what its DCAs can deliver in every secondary
/// interval of the coming primary interval, so that each secondary balance
/// stays feasible. Falls back to that common range when the aggregated offer
/// misses it entirely.
fn fit_to_window(mut bid: SmoBid, window: &[Vec<DcaBid>]) -> Result<SmoBid, String> {
    for pb in &mut bid.phases {
        let mut common = (
            Interval::new(f64::NEG_INFINITY, f64::INFINITY),
            Interval::new(f64::NEG_INFINITY, f64::INFINITY),
        );
        for dcas in window {
            let (p, q) = minkowski_range(dcas, pb.phase);
            common = (common.0.intersect(p), common.1.intersect(q));
        }
        for (what, c) in [("P", common.0), ("Q", common.1)] {
            if c.is_empty() {
                return Err(format!(
                    "phase {} {what}: the DCAs' ranges share no value across the primary interval",
                    pb.phase
                ));
            }
        }
        for (range, base, c) in [
            (&mut pb.p_range, &mut pb.p0, common.0),
            (&mut pb.q_range, &mut pb.q0, common.1),
        ] {
            let fitted = range.intersect(c);
            *range = if fitted.is_empty() { c } else { fitted };
            *base = base.clamp(range.lo, range.hi);
        }
    }
    Ok(bid)
}

fn baseline_injections(scenario: &Scenario, bids: &[DcaBid]) -> Vec<Complex64> {
    let net = &scenario.network;
    let mut s = vec![Complex64::new(0.0, 0.0); net.num_node_phases()];
    for d in bids {
        let smo = scenario.smos.iter().find(|x| x.id == d.smo).expect("validated SMO");
        let bus = net.bus_index(&smo.bus).expect("validated bus");
        for ph in &d.phases {
            let k = net.node_phase_index(bus, ph.phase).expect("validated phase");
            s[k] += Complex64::new(ph.p0, ph.q0);
        }
    }
    s
}

fn balance_error(r: &SmClearingResult) -> f64 {
    let mut worst: f64 = 0.0;
    for sp in &r.setpoint.phases {
        let (mut p, mut q) = (0.0, 0.0);
        for s in &r.schedules {
            for x in s.phases.iter().filter(|x| x.phase == sp.phase) {
                p += x.p;
                q += x.q;
            }
        }
        worst = worst.max((p - sp.p).abs()).max((q - sp.q).abs());
    }
    worst
}
