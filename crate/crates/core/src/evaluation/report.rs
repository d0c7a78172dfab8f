//! Text-table, CSV and JSON renderings of a benchmark report.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::benchmark::{BenchmarkReport, CellStatus, EvalCell};
use crate::error::{Error, Result};

/// Shown for cells that do not apply (baselines at zero shots).
pub const NOT_APPLICABLE: &str = "\u{2212}";
pub const ERROR_MARK: &str = "ERR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" | "text" | "table-text" | "txt" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::arg(format!("unknown report format `{other}`"))),
        }
    }
}

/// Rounds half away from zero at two decimals. Values are first snapped to
/// a 1e-6 grid so decimal ties like 0.695 (stored just below) round up.
fn hundredths(x: f64) -> i64 {
    let micro = (x * 1e6).round() as i64;
    (micro + 5_000 * micro.signum()) / 10_000
}

/// `mean_{std}` with two decimals; the std drops its leading zero.
pub fn format_cell_value(mean: f64, std: f64) -> String {
    let m = hundredths(mean);
    let s = hundredths(std);
    let std_text = if s < 100 { format!(".{s:02}") } else { format!("{}.{:02}", s / 100, s % 100) };
    format!("{}.{:02}_{{{std_text}}}", m / 100, m % 100)
}

fn cell_text(cell: Option<&EvalCell>) -> String {
    match cell {
        Some(EvalCell { status: CellStatus::Ok, mean: Some(m), std: Some(s), .. }) => format_cell_value(*m, *s),
        Some(EvalCell { status: CellStatus::NotApplicable, .. }) | None => NOT_APPLICABLE.to_string(),
        Some(_) => ERROR_MARK.to_string(),
    }
}

pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    }
}

/// Rows grouped as template-L models, template-T models, then baselines,
/// each group separated by a rule.
fn render_table(report: &BenchmarkReport) -> String {
    let shots = &report.metadata.shots;
    let header: Vec<String> = std::iter::once("Model".to_string()).chain(shots.iter().map(|k| k.to_string())).collect();
    let mut groups: Vec<Vec<Vec<String>>> = Vec::new();
    let mut last_group = None;
    for row in &report.rows {
        let group = row.template;
        if last_group != Some(group) {
            groups.push(Vec::new());
            last_group = Some(group);
        }
        let mut line = vec![row.label.clone()];
        line.extend(shots.iter().map(|&k| cell_text(row.cell(k))));
        groups.last_mut().expect("group pushed").push(line);
    }

    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for line in groups.iter().flatten() {
        for (w, c) in widths.iter_mut().zip(line) {
            *w = (*w).max(c.chars().count());
        }
    }
    let fmt_line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        parts.join(" | ").trim_end().to_string()
    };
    let rule: String = widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-");

    let mut out = String::new();
    let _ = writeln!(out, "{}", fmt_line(&header));
    for group in &groups {
        let _ = writeln!(out, "{rule}");
        for line in group {
            let _ = writeln!(out, "{}", fmt_line(line));
        }
    }
    out
}

/// Long form `model,template,shots,seed,auc`. Not-applicable cells give a
/// single row with empty seed and `NA`; failed seeds give `error`.
fn render_csv(report: &BenchmarkReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "template", "shots", "seed", "auc"]).expect("in-memory write");
    for row in &report.rows {
        let template = row.template.map(|t| t.to_string()).unwrap_or_default();
        for cell in &row.cells {
            let shots = cell.shots.to_string();
            if cell.status == CellStatus::NotApplicable {
                w.write_record([row.model.as_str(), &template, &shots, "", "NA"]).expect("in-memory write");
                continue;
            }
            for s in &cell.per_seed {
                let auc = s.auc.map_or_else(|| "error".to_string(), |v| v.to_string());
                w.write_record([row.model.as_str(), &template, &shots, &s.seed.to_string(), &auc])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn parse_report_json(text: &str) -> Result<BenchmarkReport> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(format_cell_value(0.695, 0.064), "0.70_{.06}");
        assert_eq!(format_cell_value(0.5, 0.0), "0.50_{.00}");
        assert_eq!(format_cell_value(0.754, 0.045), "0.75_{.05}");
        assert_eq!(format_cell_value(1.0, 0.0), "1.00_{.00}");
        assert_eq!(format_cell_value(0.004, 0.005), "0.00_{.01}");
    }

    #[test]
    fn formats_parse() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("table-text".parse::<ReportFormat>().unwrap(), ReportFormat::Table);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
