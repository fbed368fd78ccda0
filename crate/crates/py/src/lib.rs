//! Python bindings: scenarios, market runs, secondary clearing and the
//! McCormick envelope.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use lemsim_core::cli::{self, CliError, Overrides};
use lemsim_core::cosim::{self, compute_metrics, MarketLog as CoreLog, RunOptions};
use lemsim_core::network::Phase;
use lemsim_core::primary::{build_mce, Interval};
use lemsim_core::secondary::{
    clear_sm_lexicographic, DcaBid, DcaKind, DcaPhaseBid, PhaseSetpoint, PmSetpoint,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Io { .. } => PyOSError::new_err(e.to_string()),
        CliError::Schema { .. } => value_err(e),
    }
}

fn phase(s: &str) -> PyResult<Phase> {
    match s {
        "A" | "a" => Ok(Phase::A),
        "B" | "b" => Ok(Phase::B),
        "C" | "c" => Ok(Phase::C),
        _ => Err(value_err(format!("unknown phase `{s}`"))),
    }
}

/// A parsed, validated co-simulation scenario.
#[pyclass(module = "lemsim", from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: cosim::Scenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let inner = cli::parse_scenario(&path).map_err(cli_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = cli::parse_scenario_str(text).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        cli::serialize_scenario(&self.inner)
    }

    /// Copy with market settings replaced.
    #[pyo3(signature = (xi=None, epsilon=None, seed=None, horizon=None))]
    fn with_overrides(
        &self,
        xi: Option<f64>,
        epsilon: Option<f64>,
        seed: Option<u64>,
        horizon: Option<u32>,
    ) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        Overrides {
            xi,
            epsilon,
            seed,
            horizon,
            skip_no_lem_baseline: false,
        }
        .apply(&mut inner);
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_pm_intervals(&self) -> usize {
        self.inner.num_pm_intervals()
    }

    #[getter]
    fn num_sm_steps(&self) -> usize {
        self.inner.num_sm_steps()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.market.seed
    }

    #[getter]
    fn buses(&self) -> Vec<String> {
        self.inner.network.buses().iter().map(|b| b.id.clone()).collect()
    }

    #[pyo3(signature = (no_lem_baseline=true))]
    fn run(&self, py: Python<'_>, no_lem_baseline: bool) -> PyResult<MarketLog> {
        let scenario = self.inner.clone();
        let log = py
            .detach(|| cosim::run_with(&scenario, RunOptions { no_lem_baseline }))
            .map_err(value_err)?;
        Ok(MarketLog { log, scenario })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({} buses, {} SMOs, {} DCAs, {} min)",
            self.inner.network.buses().len(),
            self.inner.smos.len(),
            self.inner.dcas.len(),
            self.inner.market.horizon
        )
    }
}

/// Records of one co-simulation run.
#[pyclass(module = "lemsim")]
struct MarketLog {
    log: CoreLog,
    scenario: cosim::Scenario,
}

#[pymethods]
impl MarketLog {
    #[getter]
    fn completed(&self) -> bool {
        self.log.completed()
    }

    #[getter]
    fn halt(&self) -> Option<String> {
        self.log
            .halt
            .as_ref()
            .map(|h| format!("{:?} clearing at minute {}: {}", h.kind, h.time, h.message))
    }

    #[getter]
    fn pm_clearings(&self) -> usize {
        self.log.pm.len()
    }

    #[getter]
    fn sm_clearings(&self) -> usize {
        self.log.sm.len()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = compute_metrics(&self.log, &self.scenario);
        let d = PyDict::new(py);
        d.set_item("completed", m.completed)?;
        d.set_item("pm_clearings", m.pm_clearings)?;
        d.set_item("sm_clearings", m.sm_clearings)?;
        d.set_item("mean_v_lem", m.mean_v_lem)?;
        d.set_item("mean_v_no_lem", m.mean_v_no_lem)?;
        d.set_item("mean_abs_dev_lem", m.mean_dev_lem)?;
        d.set_item("mean_abs_dev_no_lem", m.mean_dev_no_lem)?;
        d.set_item("violations_lem", m.violations_lem)?;
        d.set_item("violations_no_lem", m.violations_no_lem)?;
        d.set_item("mean_lambda_p", m.mean_lambda_p)?;
        d.set_item("mean_lambda_q", m.mean_lambda_q)?;
        d.set_item("mean_lambda_v_bar", m.mean_lambda_v_bar)?;
        d.set_item("mean_lambda_eq", m.mean_lambda_eq)?;
        d.set_item("max_balance_error", m.max_balance_error)?;
        d.set_item("max_bilinear_gap", m.max_bilinear_gap)?;
        Ok(d)
    }

    /// One dict per (primary interval, node-phase).
    fn dlmp<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let net = &self.scenario.network;
        let out = PyList::empty(py);
        for rec in &self.log.pm {
            for d in &rec.dlmp.node_phases {
                let row = PyDict::new(py);
                row.set_item("time_min", rec.time)?;
                row.set_item("bus", &net.buses()[d.bus].id)?;
                row.set_item("phase", d.phase.to_string())?;
                row.set_item("lambda_p", d.lambda_p)?;
                row.set_item("lambda_q", d.lambda_q)?;
                row.set_item("lambda_v", (d.lambda_v.re, d.lambda_v.im))?;
                row.set_item("lambda_v_bar", d.lambda_v_bar)?;
                out.append(row)?;
            }
        }
        Ok(out)
    }

    /// One dict per (secondary interval, DCA).
    fn schedules<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = PyList::empty(py);
        for rec in &self.log.sm {
            for (s, t) in rec.result.schedules.iter().zip(&rec.tariffs.tariffs) {
                let row = PyDict::new(py);
                row.set_item("time_min", rec.time)?;
                row.set_item("smo", &rec.smo)?;
                row.set_item("dca", &s.dca)?;
                row.set_item("p", s.net_p())?;
                row.set_item("q", s.net_q())?;
                row.set_item("mu_p", t.mu_p)?;
                row.set_item("mu_q", t.mu_q)?;
                row.set_item("cash", t.cash())?;
                out.append(row)?;
            }
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "MarketLog({} primary, {} secondary clearings{})",
            self.log.pm.len(),
            self.log.sm.len(),
            if self.log.completed() { "" } else { ", halted" }
        )
    }
}

/// Runs a scenario file and writes the result bundle. Returns the exit code
/// (0 completed, 3 halted) and the summary metrics.
#[pyfunction]
#[pyo3(signature = (scenario, out, xi=None, epsilon=None, seed=None, horizon=None, no_lem_baseline=true))]
#[allow(clippy::too_many_arguments)]
fn run_bundle<'py>(
    py: Python<'py>,
    scenario: PathBuf,
    out: PathBuf,
    xi: Option<f64>,
    epsilon: Option<f64>,
    seed: Option<u64>,
    horizon: Option<u32>,
    no_lem_baseline: bool,
) -> PyResult<(i32, Bound<'py, PyDict>)> {
    let o = Overrides {
        xi,
        epsilon,
        seed,
        horizon,
        skip_no_lem_baseline: !no_lem_baseline,
    };
    let outcome = py.detach(|| cli::run_command(&scenario, &out, &o)).map_err(cli_err)?;
    let m = &outcome.metrics;
    let d = PyDict::new(py);
    d.set_item("pm_clearings", m.pm_clearings)?;
    d.set_item("sm_clearings", m.sm_clearings)?;
    d.set_item("mean_abs_dev_lem", m.mean_dev_lem)?;
    d.set_item("mean_abs_dev_no_lem", m.mean_dev_no_lem)?;
    d.set_item("halt", outcome.halt.clone())?;
    Ok((outcome.exit_code, d))
}

fn get<'py, T>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<T>
where
    T: for<'a> FromPyObject<'a, 'py>,
    for<'a> <T as FromPyObject<'a, 'py>>::Error: Into<PyErr>,
{
    match d.get_item(key)? {
        Some(v) => v.extract::<T>().map_err(|e| {
            let e: PyErr = e.into();
            value_err(format!("`{key}`: {e}"))
        }),
        None => Err(value_err(format!("missing key `{key}`"))),
    }
}

fn get_or<'py, T>(d: &Bound<'py, PyDict>, key: &str, default: T) -> PyResult<T>
where
    T: for<'a> FromPyObject<'a, 'py>,
    for<'a> <T as FromPyObject<'a, 'py>>::Error: Into<PyErr>,
{
    match d.get_item(key)? {
        Some(_) => get(d, key),
        None => Ok(default),
    }
}

fn dca_from_dict(smo: &str, d: &Bound<'_, PyDict>) -> PyResult<DcaBid> {
    let kind = match get::<String>(d, "kind")?.as_str() {
        "load" => DcaKind::Load,
        "generator" => DcaKind::Generator,
        k => return Err(value_err(format!("kind `{k}` is neither `load` nor `generator`"))),
    };
    let p0: f64 = get(d, "p0")?;
    let q0: f64 = get_or(d, "q0", 0.0)?;
    let (plo, phi): (f64, f64) = get(d, "p_range")?;
    let (qlo, qhi): (f64, f64) = get_or(d, "q_range", (q0, q0))?;
    Ok(DcaBid {
        dca: get(d, "id")?,
        smo: smo.to_string(),
        kind_p: kind,
        kind_q: kind,
        phases: vec![DcaPhaseBid {
            phase: phase(&get_or(d, "phase", "A".to_string())?)?,
            p0,
            q0,
            p_range: Interval::new(plo, phi),
            q_range: Interval::new(qlo, qhi),
        }],
        commitment: get(d, "commitment")?,
        beta_p: get_or(d, "beta_p", 1.0)?,
        beta_q: get_or(d, "beta_q", 1.0)?,
    })
}

/// Clears one SMO's secondary market on a single phase.
///
/// Each bid is a dict with `id`, `kind` (`"load"` or `"generator"`), `p0`,
/// `p_range`, `commitment` and optionally `q0`, `q_range`, `beta_p`, `beta_q`
/// and `phase`. Returns the stage optima and one schedule dict per DCA.
#[pyfunction]
#[pyo3(signature = (bids, p, q=0.0, epsilon=0.05, phase_name="A"))]
fn clear_secondary<'py>(
    py: Python<'py>,
    bids: Vec<Bound<'py, PyDict>>,
    p: f64,
    q: f64,
    epsilon: f64,
    phase_name: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let bids = bids.iter().map(|d| dca_from_dict("smo", d)).collect::<PyResult<Vec<_>>>()?;
    let sp = PmSetpoint {
        time: 0.0,
        phases: vec![PhaseSetpoint {
            phase: phase(phase_name)?,
            p,
            q,
            mu_p: 0.0,
            mu_q: 0.0,
        }],
    };
    let res = clear_sm_lexicographic("smo", &bids, &sp, epsilon).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("stage_optima", res.stage_optima())?;
    let scheds = PyList::empty(py);
    for s in &res.schedules {
        let ph = &s.phases[0];
        let row = PyDict::new(py);
        row.set_item("id", &s.dca)?;
        row.set_item("p", ph.p)?;
        row.set_item("q", ph.q)?;
        row.set_item("delta_p", ph.delta_p)?;
        row.set_item("delta_q", ph.delta_q)?;
        scheds.append(row)?;
    }
    out.set_item("schedules", scheds)?;
    Ok(out)
}

/// Range `(lo, hi)` the McCormick envelope of `w = x·y` over the given boxes
/// admits at `(x, y)`.
#[pyfunction]
fn mccormick_range(x_box: (f64, f64), y_box: (f64, f64), x: f64, y: f64) -> (f64, f64) {
    let env = build_mce("w", Interval::new(x_box.0, x_box.1), Interval::new(y_box.0, y_box.1));
    let r = env.range_at(x, y);
    (r.lo, r.hi)
}

#[pymodule]
fn lemsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<MarketLog>()?;
    m.add_function(wrap_pyfunction!(run_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(clear_secondary, m)?)?;
    m.add_function(wrap_pyfunction!(mccormick_range, m)?)?;
    Ok(())
}
