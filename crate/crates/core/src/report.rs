//! Plain-text report rendering: per-sensor optimum-threshold/EER tables and
//! the confusion breakdown, in the shape of the published results tables.

use std::fmt::Write;

use crate::eval::ConfusionCounts;

/// One row of a threshold/EER summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    pub sensor: String,
    pub mae_threshold: f64,
    pub mae_eer: f64,
    pub corr_threshold: f64,
    pub corr_eer: f64,
}

/// One row of the confusion breakdown table.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub sensor: String,
    pub mae: ConfusionCounts,
    pub corr: ConfusionCounts,
}

/// Compact threshold formatting: plain decimals in the readable range,
/// scientific notation outside it. NaN (metric not evaluated) prints as "-".
pub fn format_threshold(v: f64) -> String {
    if v.is_nan() {
        return "-".to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e6).contains(&a) {
        let rounded = (v * 1e6).round() / 1e6;
        format!("{rounded}")
    } else {
        format!("{v:.2e}")
    }
}

/// Error rates always print with three decimals; NaN prints as "-".
pub fn format_rate(v: f64) -> String {
    if v.is_nan() {
        return "-".to_string();
    }
    format!("{v:.3}")
}

fn pad(s: &str, width: usize) -> String {
    format!("{s:<width$}")
}

/// Renders the Evaluation 1/2 summary: one row per sensor with the optimum
/// threshold and EER under each metric.
pub fn render_threshold_table(title: &str, rows: &[ThresholdRow]) -> String {
    let headers = [
        "Sensors",
        "Threshold(MAE)",
        "EER(MAE)",
        "Threshold(corr)",
        "EER(corr)",
    ];
    let mut cells: Vec<[String; 5]> = Vec::with_capacity(rows.len());
    for r in rows {
        cells.push([
            r.sensor.clone(),
            format_threshold(r.mae_threshold),
            format_rate(r.mae_eer),
            format_threshold(r.corr_threshold),
            format_rate(r.corr_eer),
        ]);
    }
    render_columns(title, &headers, &cells)
}

/// Renders the per-sensor TP/TN/FP/FN breakdown for both metrics.
pub fn render_breakdown_table(title: &str, rows: &[BreakdownRow]) -> String {
    let headers = [
        "Sensor",
        "TPs(MAE)",
        "TNs(MAE)",
        "FPs(MAE)",
        "FNs(MAE)",
        "TPs(corr)",
        "TNs(corr)",
        "FPs(corr)",
        "FNs(corr)",
    ];
    let mut cells: Vec<[String; 9]> = Vec::with_capacity(rows.len());
    for r in rows {
        cells.push([
            r.sensor.clone(),
            r.mae.true_pos.to_string(),
            r.mae.true_neg.to_string(),
            r.mae.false_pos.to_string(),
            r.mae.false_neg.to_string(),
            r.corr.true_pos.to_string(),
            r.corr.true_neg.to_string(),
            r.corr.false_pos.to_string(),
            r.corr.false_neg.to_string(),
        ]);
    }
    render_columns(title, &headers, &cells)
}

/// One check line per (sensor, metric): the label totals the confusion
/// counts must conserve.
pub fn render_conservation_lines(rows: &[BreakdownRow]) -> String {
    let mut out = String::new();
    for r in rows {
        for (metric, c) in [("MAE", &r.mae), ("corr", &r.corr)] {
            writeln!(
                out,
                "{} ({metric}): tp+fn={} tn+fp={}",
                r.sensor,
                c.positives(),
                c.negatives()
            )
            .unwrap();
        }
    }
    out
}

fn render_columns<const N: usize>(title: &str, headers: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths = [0usize; N];
    for (i, h) in headers.iter().enumerate() {
        widths[i] = h.len();
    }
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    if !title.is_empty() {
        writeln!(out, "{title}").unwrap();
    }
    let header_line: Vec<String> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| pad(h, widths[i]))
        .collect();
    writeln!(out, "{}", header_line.join("  ").trim_end()).unwrap();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| pad(c, widths[i]))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    out
}
