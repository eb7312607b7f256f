//! CSV rows and the SVG line plot.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use domex_core::synth::FilterReport;

use crate::error::{CliError, CliResult};

/// One experiment measurement. Column order is fixed by field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub protocol: String,
    pub arm: String,
    pub n_domains: usize,
    pub m_per_domain: usize,
    pub seed: u64,
    pub risk: f64,
    pub risk_zero_one: f64,
    pub empirical_risk: f64,
    pub bound_value: Option<f64>,
    pub epsilon: Option<f64>,
    pub retention: f64,
    pub wall_ms: u64,
    pub config_digest: String,
}

impl ReportRow {
    pub fn check_finite(&self) -> CliResult<()> {
        let values = [self.risk, self.risk_zero_one, self.empirical_risk, self.retention]
            .into_iter()
            .chain(self.bound_value)
            .chain(self.epsilon);
        for v in values {
            if !v.is_finite() {
                return Err(CliError::Validation(format!(
                    "non-finite value in {} report row",
                    self.experiment
                )));
            }
        }
        Ok(())
    }
}

pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> CliResult<()> {
    for r in rows {
        r.check_finite()?;
    }
    write_rows_csv(path, rows)
}

pub fn write_retention_csv(path: &Path, report: &FilterReport) -> CliResult<()> {
    write_rows_csv(path, &report.per_pair)
}

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with a log2 x-axis. Each series is one `<polyline>`.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let xs = |x: f64| x.max(f64::MIN_POSITIVE).log2();
    let (x0, x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(xs(p.0)), b.max(xs(p.0)))
    });
    let (mut y0, mut y1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if y1 <= y0 || y1.is_nan() || y0.is_nan() {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let margin = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - margin, y1 + margin);
    let span_x = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| pad + (xs(x) - x0) / span_x * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let mut ticks: Vec<f64> = all.iter().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{t}</text>"#,
            px(t),
            h - pad + 16.0
        );
    }
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{y:.3}</text>"#,
            pad - 6.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        w / 2.0,
        h - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            escape(&s.name),
            s.color,
            pts.join(" ")
        );
        for p in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                px(p.0),
                py(p.1),
                s.color
            );
        }
        let ly = pad + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            w - pad - 150.0,
            s.color,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
