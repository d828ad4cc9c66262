//! Box-plot summaries and Pearson correlation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::textfeat::FeatureTable;

/// Named in report output so plots can be reproduced.
pub const QUARTILE_METHOD: &str = "linear-inclusive";
pub const WHISKER_IQR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outlier_count: usize,
    pub n: usize,
}

/// Quantile `p` of sorted data by linear interpolation between closest ranks
/// (position `(n - 1) * p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - WHISKER_IQR * iqr, q3 + WHISKER_IQR * iqr);
    let inside = |v: &&f64| **v >= lo_fence && **v <= hi_fence;
    // The medians lie inside the fences, so at least one value does too.
    let whisker_low = *sorted.iter().find(inside).expect("median within fences");
    let whisker_high = *sorted.iter().rev().find(inside).expect("median within fences");
    let outlier_count = sorted.iter().filter(|v| !inside(v)).count();
    Ok(BoxStats { median, q1, q3, whisker_low, whisker_high, outlier_count, n: sorted.len() })
}

/// Population Pearson coefficient, computed in two passes and clamped to
/// `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewRows { needed: 2, found: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature_name: String,
    /// `None` when the feature or the target is constant.
    pub r: Option<f64>,
    pub n: usize,
}

/// Correlation of every column with the target, strongest first. Undefined
/// coefficients sort last; ties keep column order.
pub fn correlation_report(table: &FeatureTable) -> Result<Vec<CorrelationRow>, AnalysisError> {
    if table.n_rows() < 2 {
        return Err(AnalysisError::EmptyInput);
    }
    let mut rows: Vec<CorrelationRow> = table
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let x: Vec<f64> = table.rows.iter().map(|r| r[j]).collect();
            CorrelationRow { feature_name: name.clone(), r: pearson(&x, &table.target).ok(), n: x.len() }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &CorrelationRow| r.r.map_or(-1.0, f64::abs);
        key(b).total_cmp(&key(a))
    });
    Ok(rows)
}

pub fn write_correlation_csv<W: Write>(out: W, rows: &[CorrelationRow]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature_name", "r", "n"])?;
    for row in rows {
        let r = row.r.map_or_else(|| "undefined".to_string(), |r| r.to_string());
        w.write_record([row.feature_name.as_str(), &r, &row.n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
