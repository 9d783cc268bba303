//! Evaluation artifacts: the per-method metric table as CSV, reliability
//! diagrams as SVG, and the cluster-quality comparison table.
//!
//! All renderers are pure functions of their inputs with fixed numeric
//! formatting, so a given input always produces identical bytes.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::clustering::ClusterQualityReport;
use crate::error::{Error, Result};
use crate::metrics::{BinSummary, MetricWithSe};

/// One evaluated method: parse success rate plus the four calibration
/// metrics, each with a bootstrap standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub success: MetricWithSe,
    pub brier: MetricWithSe,
    pub ece: MetricWithSe,
    pub smece: MetricWithSe,
    pub auroc: MetricWithSe,
}

/// The full evaluation table, one row per method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

const METRIC_HEADER: [&str; 11] = [
    "method",
    "success",
    "success_se",
    "brier",
    "brier_se",
    "ece",
    "ece_se",
    "smece",
    "smece_se",
    "auroc",
    "auroc_se",
];

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl MetricReport {
    /// Renders the table as CSV with a header row.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(METRIC_HEADER)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for row in &self.rows {
            writer
                .write_record([
                    row.method.clone(),
                    fmt_f64(row.success.value),
                    fmt_f64(row.success.se),
                    fmt_f64(row.brier.value),
                    fmt_f64(row.brier.se),
                    fmt_f64(row.ece.value),
                    fmt_f64(row.ece.se),
                    fmt_f64(row.smece.value),
                    fmt_f64(row.smece.se),
                    fmt_f64(row.auroc.value),
                    fmt_f64(row.auroc.se),
                ])
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv()?)?;
        Ok(())
    }
}

/// Renders the intra-cluster versus cross-cluster similarity comparison as
/// CSV: one row for clustered pairs, one for the random baseline.
pub fn quality_to_csv(report: &ClusterQualityReport) -> String {
    let mut out = String::new();
    out.push_str(
        "series,textual_mean,textual_std,semantic_mean,semantic_std,textual_pairs,semantic_pairs\n",
    );
    let _ = writeln!(
        out,
        "clustered,{},{},{},{},{},{}",
        report.textual_mean,
        report.textual_std,
        report.semantic_mean,
        report.semantic_std,
        report.n_textual,
        report.n_semantic
    );
    let _ = writeln!(
        out,
        "random,{},{},{},{},{},{}",
        report.random_textual_mean,
        report.random_textual_std,
        report.random_semantic_mean,
        report.random_semantic_std,
        report.n_textual,
        report.n_semantic
    );
    out
}

const SVG_SIZE: f64 = 480.0;
const PLOT_LEFT: f64 = 56.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_RIGHT: f64 = 464.0;
const PLOT_BOTTOM: f64 = 432.0;

fn px(v: f64) -> f64 {
    PLOT_LEFT + v * (PLOT_RIGHT - PLOT_LEFT)
}

fn py(v: f64) -> f64 {
    PLOT_BOTTOM - v * (PLOT_BOTTOM - PLOT_TOP)
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders a reliability diagram: one bar per confidence bin spanning the
/// bin's range with height equal to the bin's accuracy, the share of records
/// per bin printed under each bar, and a dashed diagonal marking perfect
/// calibration. Output bytes depend only on the input.
pub fn render_reliability_svg(bins: &[BinSummary], label: &str) -> String {
    let mut svg = String::with_capacity(4096);
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" fill=\"#ffffff\"/>"
    );
    let center_x = (PLOT_LEFT + PLOT_RIGHT) / 2.0;
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24.00\" font-size=\"16\" text-anchor=\"middle\" fill=\"#1a1a1a\">{}</text>",
        center_x,
        escape_xml(label)
    );
    for bin in bins.iter().filter(|b| b.count > 0) {
        let x = px(bin.lo);
        let width = px(bin.hi) - x;
        let top = py(bin.accuracy);
        let _ = writeln!(
            svg,
            "<rect class=\"bar\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#5587b2\" stroke=\"#31597e\" stroke-width=\"1\"/>",
            x,
            top,
            width,
            PLOT_BOTTOM - top
        );
    }
    let _ = writeln!(
        svg,
        "<line class=\"diagonal\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#b3432f\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for bin in bins {
        let cx = px((bin.lo + bin.hi) / 2.0);
        let _ = writeln!(
            svg,
            "<text class=\"proportion\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222222\">{:.0}%</text>",
            cx,
            PLOT_BOTTOM - 6.0,
            bin.proportion * 100.0
        );
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{PLOT_BOTTOM}\" x2=\"{PLOT_RIGHT}\" y2=\"{PLOT_BOTTOM}\" stroke=\"#333333\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{PLOT_TOP}\" x2=\"{PLOT_LEFT}\" y2=\"{PLOT_BOTTOM}\" stroke=\"#333333\" stroke-width=\"1\"/>"
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let x = px(v);
        let y = py(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{PLOT_BOTTOM}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            x,
            x,
            PLOT_BOTTOM + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333333\">{:.1}</text>",
            x,
            PLOT_BOTTOM + 18.0,
            v
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{PLOT_LEFT}\" y2=\"{:.2}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            PLOT_LEFT - 4.0,
            y,
            y
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\" fill=\"#333333\">{:.1}</text>",
            PLOT_LEFT - 8.0,
            y + 4.0,
            v
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"470.00\" font-size=\"13\" text-anchor=\"middle\" fill=\"#1a1a1a\">Confidence</text>",
        center_x
    );
    let center_y = (PLOT_TOP + PLOT_BOTTOM) / 2.0;
    let _ = writeln!(
        svg,
        "<text x=\"16.00\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#1a1a1a\" transform=\"rotate(-90 16.00 {:.2})\">Accuracy</text>",
        center_y,
        center_y
    );
    svg.push_str("</svg>\n");
    svg
}
