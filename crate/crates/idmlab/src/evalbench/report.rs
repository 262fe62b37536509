//! Report emission: CSV and JSON tables with a fixed column order, plus an
//! SVG line chart of L1 against binned occupancy (one polyline per variant).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalbench::{MaskStudyRow, MetricReport, SplitMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }

    /// Infer from a path extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            Some("svg") => ReportFormat::Svg,
            _ => ReportFormat::Csv,
        }
    }
}

fn csv_row(out: &mut String, variant: &str, split: &str, m: &SplitMetrics) {
    let _ = writeln!(out, "{variant},{split},{},{},{},{}", m.acc, m.acc_per_dim, m.l1, m.n);
}

fn to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("variant,split,acc,acc_per_dim,l1,n\n");
    for r in reports {
        csv_row(&mut out, &r.variant, "light", &r.light);
        csv_row(&mut out, &r.variant, "heavy", &r.heavy);
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn to_svg(reports: &[MetricReport]) -> String {
    let max_l1 = reports
        .iter()
        .flat_map(|r| r.curve.iter().map(|p| p.l1))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let max_occ = reports
        .iter()
        .flat_map(|r| r.curve.iter().map(|p| p.occupancy))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let sx = |occ: f64| MARGIN + occ / max_occ * (SVG_W - 2.0 * MARGIN);
    let sy = |l1: f64| SVG_H - MARGIN - l1 / max_l1 * (SVG_H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    );
    let _ = writeln!(
        out,
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>"
    );
    // Axes.
    let _ = writeln!(
        out,
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    );
    let _ = writeln!(
        out,
        "  <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = SVG_H - MARGIN
    );
    let _ = writeln!(
        out,
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\">occupancy</text>",
        SVG_W / 2.0 - 30.0,
        SVG_H - 12.0
    );
    let _ = writeln!(out, "  <text x=\"8\" y=\"{}\" font-size=\"12\">L1</text>", SVG_H / 2.0);

    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> =
            r.curve.iter().map(|p| format!("{:.2},{:.2}", sx(p.occupancy), sy(p.l1))).collect();
        let _ = writeln!(
            out,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            out,
            "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            SVG_W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            r.variant
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Write benchmark reports in the requested format.
pub fn emit_report(reports: &[MetricReport], path: &Path, format: ReportFormat) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Param("no reports to emit".into()));
    }
    let payload = match format {
        ReportFormat::Csv => to_csv(reports),
        ReportFormat::Json => serde_json::to_string_pretty(reports)
            .map_err(|e| Error::Data(format!("report encode: {e}")))?,
        ReportFormat::Svg => to_svg(reports),
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}

/// Write mask-quality study rows (CSV or JSON by format).
pub fn emit_mask_study(rows: &[MaskStudyRow], path: &Path, format: ReportFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Param("no study rows to emit".into()));
    }
    let payload = match format {
        ReportFormat::Json => serde_json::to_string_pretty(rows)
            .map_err(|e| Error::Data(format!("report encode: {e}")))?,
        _ => {
            let mut out = String::from(
                "severity,split,clean_l1,degraded_l1,n\n",
            );
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},light,{},{},{}",
                    r.severity, r.clean_light_l1, r.degraded_light_l1, r.light_n
                );
                let _ = writeln!(
                    out,
                    "{},heavy,{},{},{}",
                    r.severity, r.clean_heavy_l1, r.degraded_heavy_l1, r.heavy_n
                );
            }
            out
        }
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}
