//! Rendering a [`RunReport`] as a table, CSV or JSON.

use std::fmt;
use std::str::FromStr;

use crate::error::{config, Error, Result};

use super::runner::{Aggregate, RunReport, Stat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(config(format!("unknown report format `{other}`"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Table => "table",
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

/// `mean±std` with a fixed number of decimals.
pub fn format_cell(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$}±{std:.decimals$}")
}

fn mse_cell(s: Option<Stat>) -> String {
    s.map_or_else(|| "n/a".into(), |s| format_cell(s.mean, s.std, 4))
}

/// Satisfaction ratios are shown as percentages.
fn sr_cell(s: Option<Stat>) -> String {
    s.map_or_else(|| "n/a".into(), |s| format_cell(100.0 * s.mean, 100.0 * s.std, 2))
}

fn row(a: &Aggregate) -> [String; 6] {
    let cells = if a.failed {
        ["failed".to_string(), "failed".into(), "failed".into()]
    } else {
        [mse_cell(a.test_mse), sr_cell(a.test_sr), sr_cell(a.train_sr)]
    };
    let [mse, sr, train] = cells;
    [
        a.method.to_string(),
        mse,
        sr,
        train,
        a.runs.to_string(),
        a.diverged.to_string(),
    ]
}

const HEADER: [&str; 6] = ["method", "test MSE", "test SR (%)", "train SR (%)", "runs", "diverged"];

/// One row per method.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> Result<String> {
    if report.aggregates.is_empty() {
        return Err(config("report has no methods"));
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "method",
                "test_mse_mean",
                "test_mse_std",
                "test_sr_pct_mean",
                "test_sr_pct_std",
                "train_sr_pct_mean",
                "train_sr_pct_std",
                "runs",
                "diverged",
                "failed",
            ])?;
            let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let pct = |v: Option<f64>| v.map(|v| (100.0 * v).to_string()).unwrap_or_default();
            for a in &report.aggregates {
                w.write_record([
                    a.method.to_string(),
                    num(a.test_mse.map(|s| s.mean)),
                    num(a.test_mse.map(|s| s.std)),
                    pct(a.test_sr.map(|s| s.mean)),
                    pct(a.test_sr.map(|s| s.std)),
                    pct(a.train_sr.map(|s| s.mean)),
                    pct(a.train_sr.map(|s| s.std)),
                    a.runs.to_string(),
                    a.diverged.to_string(),
                    a.failed.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Table => {
            let rows: Vec<[String; 6]> = report.aggregates.iter().map(row).collect();
            let mut widths = HEADER.map(|h| h.chars().count());
            for r in &rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                    .collect();
                padded.join(" | ").trim_end().to_string()
            };
            let mut out = String::new();
            out.push_str(&line(&HEADER.map(String::from)));
            out.push('\n');
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
            for r in &rows {
                out.push_str(&line(r));
                out.push('\n');
            }
            out.push_str(&format!(
                "dataset: {}; layers: {:?}; selection: {:?}\n",
                report.dataset, report.layer_sizes, report.selection
            ));
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_formats() {
        assert_eq!(format_cell(0.0079, 0.0084, 4), "0.0079±0.0084");
        assert_eq!(format_cell(99.96, 0.05, 2), "99.96±0.05");
        assert_eq!(sr_cell(Some(Stat { mean: 0.9996, std: 0.0005 })), "99.96±0.05");
    }

    #[test]
    fn format_names() {
        assert_eq!("TABLE".parse::<ReportFormat>().unwrap(), ReportFormat::Table);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
