//! TOML scenario files.
//!
//! ```toml
//! schema_version = 1
//!
//! [network]
//! units = "pu"            # or "ohm": impedances in ohm, ampacity in A
//! s_base = 1e6            # VA per phase
//! v_base = 2400.0         # V line-to-neutral
//! buses = [{ id = "0", phases = "ABC", kind = "slack" }, { id = "1", phases = "ABC" }]
//!
//! [[network.branches]]
//! id = "l01"
//! from = "0"
//! to = "1"
//! phases = "ABC"
//! z_self = [0.01, 0.02]   # [re, im]; or full z_re / z_im matrices
//! z_mutual = [0.002, 0.006]
//! i_max = 5.0             # one value or one per phase
//!
//! [population]
//! units = "pu"            # or "kw" (kW and kVAR)
//! flexibility_range = [0.1, 0.3]
//! smos = [{ id = "s1", bus = "1" }]
//! dcas = [{ id = "d1", smo = "s1", shape = "flat", commitment = 0.8,
//!           phases = [{ phase = "A", p0 = -0.1, q0 = -0.02 }] }]
//!
//! [profiles]
//! flat = [1.0]            # one multiplier per secondary interval, or one value
//!
//! [market]                # every key optional
//! dt_s = 1
//! dt_p = 5
//! horizon = 60
//!
//! [prices]
//! lmp_p = [0.05]          # $/kWh per primary interval, or one value
//! lmp_q = [0.01]
//! ```

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cosim::{DcaPhaseSpec, DcaSpec, MarketConfig, Scenario, ScenarioError, SmoSpec};
use crate::network::{Branch, Bus, BusKind, NetworkError, Phase, PhaseSet, ThreePhaseNetwork};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{0}")]
    Syntax(String),
    #[error("schema_version {found} is not supported (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("[{section}] units `{found}` do not match this section (allowed: {allowed})")]
    UnitMismatch {
        section: &'static str,
        found: String,
        allowed: &'static str,
    },
    #[error("[{section}] {message}")]
    Field { section: String, message: String },
    #[error("[network] {0}")]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub network: NetworkSection,
    pub population: PopulationSection,
    pub profiles: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub market: MarketSection,
    pub prices: PricesSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub units: String,
    pub s_base: f64,
    pub v_base: f64,
    pub buses: Vec<BusEntry>,
    pub branches: Vec<BranchEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: String,
    pub phases: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPhase {
    One(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub id: String,
    pub from: String,
    pub to: String,
    pub phases: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_self: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_mutual: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_re: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_im: Option<Vec<Vec<f64>>>,
    pub i_max: PerPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    pub units: String,
    pub flexibility_range: [f64; 2],
    pub smos: Vec<SmoEntry>,
    pub dcas: Vec<DcaEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoEntry {
    pub id: String,
    pub bus: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcaEntry {
    pub id: String,
    pub smo: String,
    pub shape: String,
    pub commitment: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_q: Option<f64>,
    pub phases: Vec<DcaPhaseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcaPhaseEntry {
    pub phase: String,
    pub p0: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub dt_s: u32,
    pub dt_p: u32,
    pub horizon: u32,
    pub xi: f64,
    pub epsilon: f64,
    pub v_limits: [f64; 2],
    pub theta_window_deg: f64,
    pub seed: u64,
}

impl Default for MarketSection {
    fn default() -> Self {
        MarketConfig::default().into()
    }
}

impl From<MarketConfig> for MarketSection {
    fn from(m: MarketConfig) -> Self {
        Self {
            dt_s: m.dt_s,
            dt_p: m.dt_p,
            horizon: m.horizon,
            xi: m.xi,
            epsilon: m.epsilon,
            v_limits: [m.v_limits.0, m.v_limits.1],
            theta_window_deg: m.theta_window_deg,
            seed: m.seed,
        }
    }
}

impl From<&MarketSection> for MarketConfig {
    fn from(m: &MarketSection) -> Self {
        Self {
            dt_s: m.dt_s,
            dt_p: m.dt_p,
            horizon: m.horizon,
            xi: m.xi,
            epsilon: m.epsilon,
            v_limits: (m.v_limits[0], m.v_limits[1]),
            theta_window_deg: m.theta_window_deg,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricesSection {
    pub lmp_p: Vec<f64>,
    pub lmp_q: Vec<f64>,
}

fn field(section: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError::Field {
        section: section.into(),
        message: message.into(),
    }
}

fn phase_set(section: &str, s: &str) -> Result<PhaseSet, SchemaError> {
    s.parse().map_err(|_| field(section, format!("invalid phases `{s}`")))
}

fn matrix(section: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, SchemaError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(field(section, format!("impedance matrix must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SchemaError::Syntax(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(SchemaError::Version {
                found: file.schema_version,
            });
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn into_scenario(&self) -> Result<Scenario, SchemaError> {
        let net = &self.network;
        let (z_scale, i_scale) = match net.units.as_str() {
            "pu" => (1.0, 1.0),
            "ohm" => (1.0 / (net.v_base * net.v_base / net.s_base), net.v_base / net.s_base),
            other => {
                return Err(SchemaError::UnitMismatch {
                    section: "network",
                    found: other.to_string(),
                    allowed: "pu, ohm",
                })
            }
        };
        let mut buses = Vec::with_capacity(net.buses.len());
        for b in &net.buses {
            let section = format!("network.buses `{}`", b.id);
            let kind = match b.kind.as_deref() {
                None | Some("pq") => BusKind::Pq,
                Some("slack") => BusKind::Slack,
                Some(k) => return Err(field(section, format!("unknown bus kind `{k}` (slack, pq)"))),
            };
            buses.push(Bus::new(b.id.clone(), phase_set(&section, &b.phases)?, kind));
        }
        let mut branches = Vec::with_capacity(net.branches.len());
        for br in &net.branches {
            let section = format!("network.branches `{}`", br.id);
            let phases = phase_set(&section, &br.phases)?;
            let n = phases.len();
            let z = match (br.z_self, &br.z_re, &br.z_im) {
                (Some(s), None, None) => {
                    let m = br.z_mutual.unwrap_or([0.0, 0.0]);
                    DMatrix::from_fn(n, n, |i, j| {
                        let v = if i == j { s } else { m };
                        Complex64::new(v[0], v[1])
                    })
                }
                (None, Some(re), Some(im)) if br.z_mutual.is_none() => {
                    let (re, im) = (matrix(&section, re, n)?, matrix(&section, im, n)?);
                    DMatrix::from_fn(n, n, |i, j| Complex64::new(re[(i, j)], im[(i, j)]))
                }
                _ => {
                    return Err(field(
                        section,
                        "give either z_self (with optional z_mutual) or both z_re and z_im",
                    ))
                }
            };
            let i_max = match &br.i_max {
                PerPhase::One(v) => vec![*v; n],
                PerPhase::Each(v) if v.len() == n => v.clone(),
                PerPhase::Each(v) => {
                    return Err(field(section, format!("i_max has {} values for {n} phases", v.len())))
                }
            };
            branches.push(Branch {
                id: br.id.clone(),
                from: br.from.clone(),
                to: br.to.clone(),
                phases,
                z: z.map(|x| x * z_scale),
                i_max: i_max.into_iter().map(|x| x * i_scale).collect(),
            });
        }
        let network = ThreePhaseNetwork::new(buses, branches, net.s_base, net.v_base)?;

        let pop = &self.population;
        let p_scale = match pop.units.as_str() {
            "pu" => 1.0,
            "kw" => 1000.0 / net.s_base,
            other => {
                return Err(SchemaError::UnitMismatch {
                    section: "population",
                    found: other.to_string(),
                    allowed: "pu, kw",
                })
            }
        };
        let smos = pop
            .smos
            .iter()
            .map(|s| SmoSpec {
                id: s.id.clone(),
                bus: s.bus.clone(),
                alpha_p: s.alpha_p,
                alpha_q: s.alpha_q,
            })
            .collect();
        let mut dcas = Vec::with_capacity(pop.dcas.len());
        for d in &pop.dcas {
            let section = format!("population.dcas `{}`", d.id);
            let mut phases = Vec::new();
            for ph in &d.phases {
                let phase = match ph.phase.as_str() {
                    "A" | "a" => Phase::A,
                    "B" | "b" => Phase::B,
                    "C" | "c" => Phase::C,
                    other => return Err(field(section, format!("unknown phase `{other}`"))),
                };
                phases.push(DcaPhaseSpec {
                    phase,
                    p0: ph.p0 * p_scale,
                    q0: ph.q0 * p_scale,
                });
            }
            dcas.push(DcaSpec {
                id: d.id.clone(),
                smo: d.smo.clone(),
                phases,
                shape: d.shape.clone(),
                commitment: d.commitment,
                beta_p: d.beta_p,
                beta_q: d.beta_q,
            });
        }
        let scenario = Scenario {
            network,
            smos,
            dcas,
            flexibility_range: (pop.flexibility_range[0], pop.flexibility_range[1]),
            profiles: self.profiles.clone(),
            lmp_p: self.prices.lmp_p.clone(),
            lmp_q: self.prices.lmp_q.clone(),
            market: (&self.market).into(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// File form of a scenario, in per-unit with full impedance matrices.
    pub fn from_scenario(s: &Scenario) -> Self {
        let net = &s.network;
        let buses = net
            .buses()
            .iter()
            .map(|b| BusEntry {
                id: b.id.clone(),
                phases: b.phases.to_string(),
                kind: (b.kind == BusKind::Slack).then(|| "slack".to_string()),
            })
            .collect();
        let rows = |z: &DMatrix<Complex64>, f: fn(&Complex64) -> f64| {
            (0..z.nrows())
                .map(|i| (0..z.ncols()).map(|j| f(&z[(i, j)])).collect())
                .collect()
        };
        let branches = net
            .branches()
            .iter()
            .map(|b| BranchEntry {
                id: b.id.clone(),
                from: b.from.clone(),
                to: b.to.clone(),
                phases: b.phases.to_string(),
                z_self: None,
                z_mutual: None,
                z_re: Some(rows(&b.z, |c| c.re)),
                z_im: Some(rows(&b.z, |c| c.im)),
                i_max: PerPhase::Each(b.i_max.clone()),
            })
            .collect();
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            network: NetworkSection {
                units: "pu".into(),
                s_base: net.s_base(),
                v_base: net.v_base(),
                buses,
                branches,
            },
            population: PopulationSection {
                units: "pu".into(),
                flexibility_range: [s.flexibility_range.0, s.flexibility_range.1],
                smos: s
                    .smos
                    .iter()
                    .map(|x| SmoEntry {
                        id: x.id.clone(),
                        bus: x.bus.clone(),
                        alpha_p: x.alpha_p,
                        alpha_q: x.alpha_q,
                    })
                    .collect(),
                dcas: s
                    .dcas
                    .iter()
                    .map(|d| DcaEntry {
                        id: d.id.clone(),
                        smo: d.smo.clone(),
                        shape: d.shape.clone(),
                        commitment: d.commitment,
                        beta_p: d.beta_p,
                        beta_q: d.beta_q,
                        phases: d
                            .phases
                            .iter()
                            .map(|p| DcaPhaseEntry {
                                phase: p.phase.letter().to_string(),
                                p0: p.p0,
                                q0: p.q0,
                            })
                            .collect(),
                    })
                    .collect(),
            },
            profiles: s.profiles.clone(),
            market: s.market.clone().into(),
            prices: PricesSection {
                lmp_p: s.lmp_p.clone(),
                lmp_q: s.lmp_q.clone(),
            },
        }
    }
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, SchemaError> {
    ScenarioFile::parse(text)?.into_scenario()
}

pub fn serialize_scenario(s: &Scenario) -> String {
    ScenarioFile::from_scenario(s).to_toml()
}
