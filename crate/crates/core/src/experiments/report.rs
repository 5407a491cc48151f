//! CSV and JSON emission of sweep reports.

use std::path::Path;
use std::str::FromStr;

use super::sweep::{AttractorReport, ConvergenceMetrics};
use crate::error::{pre, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(LabError::Config(format!("unknown report format '{other}' (csv or json)"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 24] = [
    "eps",
    "m",
    "tau",
    "rho",
    "beta",
    "graph_dist",
    "graph_lipschitz",
    "equilibria_graph_dist",
    "reduced_map_c0",
    "reduced_map_c1",
    "time_one_dist",
    "smoothing_lip",
    "attractor_dist_reduced",
    "attractor_dist_h1q",
    "attractor_dist_h1qeps",
    "l_hat",
    "shadow_variation",
    "bound_lhs",
    "bound_rhs",
    "bound_holds",
    "chain_ratio",
    "min_margin",
    "status",
    "error",
];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn metric_fields(m: &ConvergenceMetrics) -> Vec<String> {
    vec![
        m.m.to_string(),
        num(m.tau),
        num(m.rho),
        num(m.beta),
        num(m.graph_dist),
        num(m.graph_lipschitz),
        num(m.equilibria_graph_dist),
        num(m.reduced_map_c0),
        num(m.reduced_map_c1),
        num(m.time_one_dist),
        num(m.smoothing_lip),
        num(m.attractor_dist_reduced),
        num(m.attractor_dist_h1q),
        num(m.attractor_dist_h1qeps),
        num(m.l_hat),
        num(m.shadow_variation),
        num(m.bound_lhs),
        num(m.bound_rhs),
        m.bound_holds.to_string(),
        m.chain_ratio.map(num).unwrap_or_default(),
        num(m.min_margin),
    ]
}

/// CSV text of the rows: fixed column order, 17 significant digits.
pub fn to_csv(report: &AttractorReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| LabError::Config(format!("CSV encoding: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in &report.table.rows {
        let mut rec = vec![num(row.eps)];
        match &row.metrics {
            Some(m) => {
                rec.extend(metric_fields(m));
                rec.push("ok".into());
            }
            None => {
                rec.extend(std::iter::repeat_n(String::new(), CSV_COLUMNS.len() - 3));
                rec.push("error".into());
            }
        }
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Config(format!("CSV encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

pub fn to_json(report: &AttractorReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn from_json(text: &str) -> Result<AttractorReport> {
    serde_json::from_str(text).map_err(|e| LabError::Config(format!("report JSON: {e}")))
}

pub fn render(report: &AttractorReport, format: ReportFormat) -> Result<String> {
    pre(!report.table.rows.is_empty(), || "empty report table".into())?;
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => Ok(to_json(report)),
    }
}

pub fn emit_report(report: &AttractorReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = render(report, format)?;
    std::fs::write(path, text).map_err(|source| LabError::Io { path: path.display().to_string(), source })
}
