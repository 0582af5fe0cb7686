//! Plain-text tables and versioned JSON for metric reports.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{BargeInReport, LatencyReport, MetricsError};
use crate::audio::Language;
use crate::eot::EotEvalReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "table-text" => Ok(Self::TableText),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Any combination of the three report families, one row per system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub barge_in: Vec<BargeInReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eot: Vec<EotEvalReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latency: Vec<LatencyReport>,
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            barge_in: Vec::new(),
            eot: Vec::new(),
            latency: Vec::new(),
        }
    }
}

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.barge_in.is_empty() && self.eot.is_empty() && self.latency.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let r: Self = serde_json::from_str(text).map_err(|e| MetricsError::Json(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(MetricsError::Json(format!("unsupported schema_version {}", r.schema_version)));
        }
        Ok(r)
    }
}

/// Renders a report. Output depends only on the report contents.
pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> Result<String, MetricsError> {
    if report.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| MetricsError::Json(e.to_string())),
        ReportFormat::TableText => Ok(render_tables(report)),
    }
}

fn language_name(l: Language) -> &'static str {
    match l {
        Language::Zh => "Chinese",
        Language::En => "English",
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.1}", v * 100.0))
}

/// Left-aligned first column, right-aligned others, two spaces apart.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
    out.push('\n');
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn render_tables(report: &MetricsReport) -> String {
    let mut sections = Vec::new();
    if !report.barge_in.is_empty() {
        let rows: Vec<Vec<String>> = report
            .barge_in
            .iter()
            .map(|r| vec![r.system.clone(), r.t90_ms.to_string(), format!("{:.1}", r.false_barge_in_rate * 100.0)])
            .collect();
        sections.push(format!(
            "Barge-in\n{}",
            table(&["System", "T90 (ms)", "False barge-in rate (%)"], &rows)
        ));
    }
    if !report.eot.is_empty() {
        let rows: Vec<Vec<String>> = report
            .eot
            .iter()
            .flat_map(|r| {
                r.languages.iter().map(|l| {
                    vec![
                        r.backend.clone(),
                        language_name(l.language).into(),
                        pct(l.finished_acc),
                        pct(l.unfinished_acc),
                        pct(l.average_acc),
                    ]
                })
            })
            .collect();
        sections.push(format!(
            "End of turn\n{}",
            table(&["System", "Language", "Finished (%)", "Unfinished (%)", "Average (%)"], &rows)
        ));
    }
    if !report.latency.is_empty() {
        let rows: Vec<Vec<String>> = report
            .latency
            .iter()
            .map(|r| vec![r.system.clone(), format!("{:.3}", r.p50), format!("{:.3}", r.p95)])
            .collect();
        sections.push(format!("Latency\n{}", table(&["System", "P50 (s)", "P95 (s)"], &rows)));
    }
    sections.join("\n")
}
