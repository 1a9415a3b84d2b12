//! CSV tables, text summaries and SVG line plots of experiment reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentReport, ReportRow};
use crate::error::Result;

pub const CSV_HEADER: &str =
    "model,method,t_e,rank,foerstner,exact_risk,empirical_risk,emp_stderr,seed";

/// Values below this are drawn at the floor of the log axis.
const LOG_FLOOR: f64 = 1e-16;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

// Debug formatting of f64 is the shortest string that parses back exactly.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn csv_string(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model,
            r.method,
            num(r.t_e),
            r.rank,
            num(r.foerstner),
            num(r.exact_risk),
            opt(r.empirical_risk),
            opt(r.emp_stderr),
            r.seed
        );
    }
    out
}

pub fn emit_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    fs::write(path, csv_string(report))?;
    Ok(())
}

/// One `hankel_<name>_<te>.csv` per end time in `dir`.
pub fn emit_hankel(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for t_e in distinct(report.spectra.iter().map(|s| s.t_e)) {
        let mut out = String::from("method,index,value,normalized\n");
        for s in report.spectra.iter().filter(|s| s.t_e == t_e) {
            for (i, (v, n)) in s.values.iter().zip(s.normalized()).enumerate() {
                let _ = writeln!(out, "{},{},{},{}", s.method, i + 1, num(*v), num(n));
            }
        }
        let path = dir.join(format!("hankel_{}_{}.csv", report.name, t_e));
        fs::write(&path, out)?;
        files.push(path);
    }
    Ok(files)
}

pub fn summary_string(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment: {}", report.name);
    let _ = writeln!(out, "spectral abscissa: {:e}", report.spectral_abscissa);
    let _ = writeln!(out, "rows: {}", report.rows.len());
    let _ = writeln!(out, "optimality violations: {}", report.violations.len());
    let _ = writeln!(out, "\nwarnings:");
    for w in &report.warnings {
        let _ = writeln!(out, "  {w}");
    }
    let _ = writeln!(out, "\ndiagnostics:");
    for d in &report.diagnostics {
        let _ = writeln!(out, "  {d}");
    }
    out
}

pub fn emit_summary(report: &ExperimentReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("summary_{}.txt", report.name));
    fs::write(&path, summary_string(report))?;
    Ok(path)
}

/// First-appearance order without duplicates.
fn distinct<T: PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Metric {
    Foerstner,
    Risk,
}

impl Metric {
    fn slug(self) -> &'static str {
        match self {
            Metric::Foerstner => "foerstner",
            Metric::Risk => "risk",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Foerstner => "Foerstner distance of posterior covariance",
            Metric::Risk => "exact Bayes risk of posterior mean",
        }
    }

    fn value(self, r: &ReportRow) -> f64 {
        match self {
            Metric::Foerstner => r.foerstner,
            Metric::Risk => r.exact_risk,
        }
    }
}

fn log_value(v: f64) -> f64 {
    if v.is_finite() {
        v.max(LOG_FLOOR).log10()
    } else {
        LOG_FLOOR.log10()
    }
}

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 48.0;
const GAP: f64 = 36.0;
const LEGEND_H: f64 = 20.0;

fn render_svg(model: &str, rows: &[&ReportRow], metric: Metric) -> String {
    let panels = distinct(rows.iter().map(|r| r.t_e));
    let methods = distinct(rows.iter().map(|r| r.method.as_str()));
    let logs: Vec<f64> = rows.iter().map(|r| log_value(metric.value(r))).collect();
    let mut y_lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let mut y_hi = logs
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil();
    if y_hi <= y_lo {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let x_lo = rows.iter().map(|r| r.rank).min().unwrap_or(1) as f64;
    let mut x_hi = rows.iter().map(|r| r.rank).max().unwrap_or(1) as f64;
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }

    let width = MARGIN_L + panels.len() as f64 * (PANEL_W + GAP);
    let height = MARGIN_T + LEGEND_H + PANEL_H + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" font-size="14">{model}: {}</text>"#,
        MARGIN_L,
        metric.title()
    );
    for (i, m) in methods.iter().enumerate() {
        let x = MARGIN_L + i as f64 * 110.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="34" x2="{:.1}" y2="34" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="38">{m}</text>"#,
            x + 20.0,
            x + 24.0
        );
    }

    let top = MARGIN_T + LEGEND_H;
    for (p, &t_e) in panels.iter().enumerate() {
        let left = MARGIN_L + p as f64 * (PANEL_W + GAP);
        let px = |rank: f64| left + (rank - x_lo) / (x_hi - x_lo) * PANEL_W;
        let py = |v: f64| top + (y_hi - v) / (y_hi - y_lo) * PANEL_H;
        let _ = writeln!(
            s,
            r##"<rect x="{left:.1}" y="{top:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">t_e = {t_e}</text>"#,
            left + PANEL_W / 2.0,
            top - 6.0
        );
        let decades = (y_hi - y_lo) as usize;
        let stride = decades.div_ceil(8).max(1);
        for k in (0..=decades).step_by(stride) {
            let v = y_lo + k as f64;
            let y = py(v);
            let _ = writeln!(
                s,
                r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{v:.0}</text>"##,
                left + PANEL_W,
                left - 4.0,
                y + 4.0
            );
        }
        let span = (x_hi - x_lo) as usize;
        let xstride = span.div_ceil(5).max(1);
        for k in (0..=span).step_by(xstride) {
            let rank = x_lo + k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{rank:.0}</text>"#,
                px(rank),
                top + PANEL_H + 14.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">rank</text>"#,
            left + PANEL_W / 2.0,
            top + PANEL_H + 30.0
        );
        for (i, m) in methods.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.t_e == t_e && r.method == *m)
                .map(|r| (px(r.rank as f64), py(log_value(metric.value(r)))))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let list: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                list.join(" ")
            );
            for (x, y) in pts {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{x:.1}" cy="{y:.1}" r="2" fill="{color}"/>"#
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One SVG per (model, metric): x = rank, y = log10 error, one panel per
/// end time and one line per method.
pub fn emit_svg_plots(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for model in distinct(report.rows.iter().map(|r| r.model.as_str())) {
        let rows: Vec<&ReportRow> = report.rows.iter().filter(|r| r.model == model).collect();
        for metric in [Metric::Foerstner, Metric::Risk] {
            let path = dir.join(format!("{model}_{}.svg", metric.slug()));
            fs::write(&path, render_svg(model, &rows, metric))?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Write `<name>.csv`, Hankel spectra, the summary and optionally plots.
pub fn write_report(report: &ExperimentReport, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{}.csv", report.name));
    emit_csv(report, &csv)?;
    let mut files = vec![csv];
    files.extend(emit_hankel(report, dir)?);
    files.push(emit_summary(report, dir)?);
    if plots {
        files.extend(emit_svg_plots(report, dir)?);
    }
    Ok(files)
}
