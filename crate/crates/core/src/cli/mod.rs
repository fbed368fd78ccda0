//! Scenario files, batch runs and result bundles.
//!
//! A bundle directory holds five CSV files plus `manifest.txt`:
//!
//! | file | columns |
//! |------|---------|
//! | `voltages.csv` | `time_min, bus, phase, v_lem, v_no_lem, v_realized` |
//! | `dlmp.csv` | `time_min, bus, phase, lambda_p, lambda_q, lambda_v_bar, lambda_eq` |
//! | `tariffs.csv` | `time_min, smo, dca, p, q, mu_p, mu_q, cash_p, cash_q, cash` |
//! | `gaps.csv` | `time_min, max_bilinear, ring_violation, ampacity_violation` |
//! | `summary.csv` | `metric, value` |
//!
//! Voltages are magnitudes in p.u. (`v_no_lem` and `v_realized` are empty
//! where no power flow was solved), prices are $/kWh and $/kVARh, cash is in
//! dollars paid by the DCA to its SMO. `lambda_eq` is empty where the bus has
//! no net injection. Floats are written in shortest round-trip form.

mod bundle;
mod file;

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cosim::{compute_metrics, run_with, Metrics, RunOptions, Scenario};

pub use bundle::{write_bundle, BUNDLE_FILES};
pub use file::{
    parse_scenario_str, serialize_scenario, BranchEntry, BusEntry, DcaEntry, DcaPhaseEntry,
    MarketSection, NetworkSection, PerPhase, PopulationSection, PricesSection, ScenarioFile,
    SchemaError, SmoEntry, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Schema { path: String, source: SchemaError },
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::Io { .. } => 4,
        }
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    parse_scenario_str(&text).map_err(|source| CliError::Schema {
        path: path.display().to_string(),
        source,
    })
}

/// Command-line values that replace the scenario file's.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub xi: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub horizon: Option<u32>,
    pub skip_no_lem_baseline: bool,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        if let Some(x) = self.xi {
            s.market.xi = x;
        }
        if let Some(e) = self.epsilon {
            s.market.epsilon = e;
        }
        if let Some(seed) = self.seed {
            s.market.seed = seed;
        }
        if let Some(h) = self.horizon {
            s.market.horizon = h;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// 0 when the run completed, 3 when it halted on an infeasible clearing.
    pub exit_code: i32,
    pub metrics: Metrics,
    pub halt: Option<String>,
}

/// Parses, runs and writes the bundle. A halted run still writes the partial
/// bundle, flagged in its manifest.
pub fn run_command(scenario_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<RunOutcome, CliError> {
    let mut scenario = parse_scenario(scenario_path)?;
    overrides.apply(&mut scenario);
    let schema = |source| CliError::Schema {
        path: scenario_path.display().to_string(),
        source,
    };
    scenario.validate().map_err(|e| schema(e.into()))?;
    let opts = RunOptions {
        no_lem_baseline: !overrides.skip_no_lem_baseline,
    };
    let log = run_with(&scenario, opts).map_err(|e| schema(e.into()))?;
    let metrics = compute_metrics(&log, &scenario);
    let halt = log.halt.as_ref().map(|h| {
        let who = h.smo.as_deref().map(|s| format!(" SMO `{s}`")).unwrap_or_default();
        format!("{:?} clearing at minute {}{who}: {}", h.kind, h.time, h.message)
    });
    write_bundle(out_dir, &scenario, overrides, &log, &metrics).map_err(|source| CliError::Io {
        context: format!("writing bundle to {}", out_dir.display()),
        source,
    })?;
    Ok(RunOutcome {
        exit_code: if halt.is_some() { 3 } else { 0 },
        metrics,
        halt,
    })
}
