//! Box-plot summaries of energy per response and per token, grouped by a
//! record label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use super::stats::{box_stats, BoxStats, QUARTILE_METHOD};
use super::AnalysisError;
use crate::dataset::InferenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Model,
    Hardware,
    Dataset,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(GroupBy::Model),
            "hardware" => Ok(GroupBy::Hardware),
            "dataset" => Ok(GroupBy::Dataset),
            other => Err(format!("unknown grouping `{other}` (model, hardware or dataset)")),
        }
    }
}

impl GroupBy {
    pub fn label(self, r: &InferenceRecord) -> String {
        match self {
            GroupBy::Model => r.model_name.clone(),
            GroupBy::Hardware => r.hardware_label.clone(),
            GroupBy::Dataset => r.source_dataset.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    EnergyPerResponse,
    EnergyPerToken,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::EnergyPerResponse => "energy_kwh",
            Metric::EnergyPerToken => "energy_per_token_kwh",
        }
    }

    fn value(self, r: &InferenceRecord) -> Option<f64> {
        match self {
            Metric::EnergyPerResponse => Some(r.energy_llm_kwh),
            Metric::EnergyPerToken => r.energy_per_token_kwh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group: String,
    pub metric: Metric,
    pub stats: BoxStats,
}

/// One row per (group, metric), groups in label order. Groups with no
/// defined per-token values get no per-token row.
pub fn grouped_box_stats(records: &[InferenceRecord], by: GroupBy) -> Result<Vec<GroupStats>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<&InferenceRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(by.label(r)).or_default().push(r);
    }
    let mut out = Vec::new();
    for metric in [Metric::EnergyPerResponse, Metric::EnergyPerToken] {
        for (group, members) in &groups {
            let values: Vec<f64> = members.iter().filter_map(|r| metric.value(r)).collect();
            if values.is_empty() {
                continue;
            }
            out.push(GroupStats { group: group.clone(), metric, stats: box_stats(&values)? });
        }
    }
    Ok(out)
}

pub fn write_box_csv<W: Write>(out: W, rows: &[GroupStats]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group", "metric", "n", "median", "q1", "q3", "whisker_low", "whisker_high", "outlier_count", "quartile_method",
    ])?;
    for g in rows {
        let s = &g.stats;
        w.write_record([
            g.group.clone(),
            g.metric.name().to_string(),
            s.n.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            s.outlier_count.to_string(),
            QUARTILE_METHOD.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One panel per metric, one box per group, each panel on its own linear
/// scale. Medians are drawn in red.
pub fn render_box_svg(rows: &[GroupStats]) -> String {
    const PANEL_W: f64 = 420.0;
    const PANEL_H: f64 = 300.0;
    const MARGIN: f64 = 60.0;
    let metrics: Vec<Metric> = {
        let mut m: Vec<Metric> = rows.iter().map(|g| g.metric).collect();
        m.sort();
        m.dedup();
        m
    };
    let width = MARGIN + metrics.len().max(1) as f64 * (PANEL_W + MARGIN);
    let height = PANEL_H + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, metric) in metrics.iter().enumerate() {
        let panel: Vec<&GroupStats> = rows.iter().filter(|g| g.metric == *metric).collect();
        let x0 = MARGIN + p as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let lo = panel.iter().map(|g| g.stats.whisker_low).fold(f64::INFINITY, f64::min);
        let hi = panel.iter().map(|g| g.stats.whisker_high).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { lo.abs().max(1e-30) };
        let y = |v: f64| y0 + PANEL_H - (v - lo) / span * PANEL_H;
        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 20.0,
            metric.name()
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3e}</text>"#, x0 - 4.0, y0 + 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3e}</text>"#, x0 - 4.0, y0 + PANEL_H);
        let slot = PANEL_W / panel.len().max(1) as f64;
        for (i, g) in panel.iter().enumerate() {
            let cx = x0 + slot * (i as f64 + 0.5);
            let half = (slot * 0.3).min(40.0);
            let s = &g.stats;
            let _ = writeln!(
                svg,
                r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
                y(s.whisker_low),
                y(s.whisker_high)
            );
            for w in [s.whisker_low, s.whisker_high] {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
                    cx - half / 2.0,
                    y(w),
                    cx + half / 2.0,
                    y(w)
                );
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#cfe2f3" stroke="black"/>"##,
                cx - half,
                y(s.q3),
                2.0 * half,
                (y(s.q1) - y(s.q3)).max(0.5)
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="red" stroke-width="2"/>"#,
                cx - half,
                y(s.median),
                cx + half,
                y(s.median)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{cx}" y="{}" text-anchor="middle">{} (n={}, {} out)</text>"#,
                y0 + PANEL_H + 16.0,
                escape(&g.group),
                s.n,
                s.outlier_count
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
