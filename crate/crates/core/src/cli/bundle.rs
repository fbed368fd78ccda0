use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use super::{serialize_scenario, Overrides};
use crate::cosim::{MarketLog, Metrics, Scenario};

pub const BUNDLE_FILES: [&str; 5] = ["voltages.csv", "dlmp.csv", "tariffs.csv", "gaps.csv", "summary.csv"];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_writer(dir: &Path, name: &str) -> io::Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(fs::File::create(dir.join(name))?))
}

pub fn write_bundle(
    dir: &Path,
    scenario: &Scenario,
    overrides: &Overrides,
    log: &MarketLog,
    metrics: &Metrics,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let net = &scenario.network;

    let mut w = csv_writer(dir, "voltages.csv")?;
    w.write_record(["time_min", "bus", "phase", "v_lem", "v_no_lem", "v_realized"])?;
    for r in &metrics.voltages {
        w.write_record([
            r.time.to_string(),
            r.bus.clone(),
            r.phase.to_string(),
            r.v_lem.to_string(),
            opt(r.v_no_lem),
            opt(r.v_realized),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "dlmp.csv")?;
    w.write_record(["time_min", "bus", "phase", "lambda_p", "lambda_q", "lambda_v_bar", "lambda_eq"])?;
    for rec in &log.pm {
        for d in &rec.dlmp.node_phases {
            let eq = rec.dlmp.nodes.iter().find(|n| n.bus == d.bus).and_then(|n| n.lambda_eq);
            w.write_record([
                rec.time.to_string(),
                net.buses()[d.bus].id.clone(),
                d.phase.to_string(),
                d.lambda_p.to_string(),
                d.lambda_q.to_string(),
                d.lambda_v_bar.to_string(),
                opt(eq),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "tariffs.csv")?;
    w.write_record(["time_min", "smo", "dca", "p", "q", "mu_p", "mu_q", "cash_p", "cash_q", "cash"])?;
    for rec in &log.sm {
        for (s, t) in rec.result.schedules.iter().zip(&rec.tariffs.tariffs) {
            w.write_record([
                rec.time.to_string(),
                rec.smo.clone(),
                t.dca.clone(),
                s.net_p().to_string(),
                s.net_q().to_string(),
                t.mu_p.to_string(),
                t.mu_q.to_string(),
                t.cash_p.to_string(),
                t.cash_q.to_string(),
                t.cash().to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "gaps.csv")?;
    w.write_record(["time_min", "max_bilinear", "ring_violation", "ampacity_violation"])?;
    for rec in &log.pm {
        w.write_record([
            rec.time.to_string(),
            rec.gap.max_bilinear.to_string(),
            rec.gap.ring_violation.to_string(),
            rec.gap.ampacity_violation.to_string(),
        ])?;
    }
    w.flush()?;

    let m = metrics;
    let mut w = csv_writer(dir, "summary.csv")?;
    w.write_record(["metric", "value"])?;
    let rows: Vec<(&str, String)> = vec![
        ("completed", m.completed.to_string()),
        ("pm_clearings", m.pm_clearings.to_string()),
        ("sm_clearings", m.sm_clearings.to_string()),
        ("mean_v_lem", m.mean_v_lem.to_string()),
        ("mean_v_no_lem", opt(m.mean_v_no_lem)),
        ("mean_abs_dev_lem", m.mean_dev_lem.to_string()),
        ("mean_abs_dev_no_lem", opt(m.mean_dev_no_lem)),
        ("violations_lem", m.violations_lem.to_string()),
        ("violations_no_lem", m.violations_no_lem.map(|v| v.to_string()).unwrap_or_default()),
        ("mean_lambda_p", m.mean_lambda_p.to_string()),
        ("mean_lambda_q", m.mean_lambda_q.to_string()),
        ("mean_lambda_v_bar", m.mean_lambda_v_bar.to_string()),
        ("mean_lambda_eq", opt(m.mean_lambda_eq)),
        ("max_balance_error", m.max_balance_error.to_string()),
        ("max_bilinear_gap", m.max_bilinear_gap.to_string()),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;

    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut f = fs::File::create(dir.join("manifest.txt"))?;
    writeln!(f, "generated_unix = {stamp}")?;
    match &log.halt {
        None => writeln!(f, "status = \"completed\"")?,
        Some(h) => writeln!(
            f,
            "status = \"halted\"\nhalt = {:?}",
            format!("{:?} at minute {}: {}", h.kind, h.time, h.message)
        )?,
    }
    writeln!(f, "no_lem_baseline = {}", !overrides.skip_no_lem_baseline)?;
    writeln!(f, "\n# effective scenario\n")?;
    f.write_all(serialize_scenario(scenario).as_bytes())?;
    Ok(())
}
