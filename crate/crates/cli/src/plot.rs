//! `covbal plot`: self-contained SVG line charts from summary or entropy CSV files.

use std::fmt::Write as _;

use clap::ValueEnum;

use covbal_core::ratio::{parse_rational, to_f64};

use crate::error::{CliError, CliResult};

/// What to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Simulated SD per procedure (summary CSV).
    Sd,
    /// Simulated mean per procedure (summary CSV).
    Mean,
    /// Conditional entropy and sum of variances per target (entropy CSV).
    Entropy,
}

/// Row filters; unset filters default to the first metric and group in the file
/// (the unweighted rows for entropy files).
#[derive(Debug, Clone, Default)]
pub struct PlotFilter {
    pub metric: Option<String>,
    pub group: Option<String>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x index, y)` pairs.
    pub points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_values: Vec<String>,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn malformed(msg: impl std::fmt::Display) -> CliError {
    CliError::validation(format!("malformed CSV: {msg}"))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> CliResult<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(malformed)?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(malformed))
            .collect::<CliResult<Vec<Vec<String>>>>()?;
        Ok(Self { headers, rows })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(format!("missing column {name:?}")))
    }
}

fn number(text: &str, what: &str) -> CliResult<f64> {
    text.trim()
        .parse()
        .map_err(|_| malformed(format!("{what} {text:?} is not a number")))
}

fn push_point(series: &mut Vec<Series>, name: &str, x: usize, y: f64) {
    match series.iter_mut().find(|s| s.name == name) {
        Some(s) => s.points.push((x, y)),
        None => series.push(Series {
            name: name.to_string(),
            points: vec![(x, y)],
        }),
    }
}

fn x_index(xs: &mut Vec<String>, label: &str) -> usize {
    match xs.iter().position(|x| x == label) {
        Some(i) => i,
        None => {
            xs.push(label.to_string());
            xs.len() - 1
        }
    }
}

/// Builds the chart for a CSV produced by `simulate` or `entropy`.
pub fn build_chart(csv_text: &str, kind: PlotKind, filter: &PlotFilter) -> CliResult<Chart> {
    let table = Table::parse(csv_text)?;
    let value_col = table.col("param_value")?;
    let param = table
        .col("param")
        .ok()
        .and_then(|c| table.rows.iter().map(|r| r[c].clone()).find(|p| !p.is_empty()))
        .unwrap_or_default();
    let mut xs = Vec::new();
    let mut series = Vec::new();
    let title;
    let y_label;
    match kind {
        PlotKind::Sd | PlotKind::Mean => {
            let (metric_col, group_col, proc_col) = (table.col("metric")?, table.col("group")?, table.col("procedure")?);
            let y_col = table.col(if kind == PlotKind::Sd { "sd" } else { "mean" })?;
            let first = table.rows.first();
            let metric = filter.metric.clone().or_else(|| first.map(|r| r[metric_col].clone()));
            let group = filter.group.clone().or_else(|| first.map(|r| r[group_col].clone()));
            for r in &table.rows {
                if Some(&r[metric_col]) != metric.as_ref() || Some(&r[group_col]) != group.as_ref() {
                    continue;
                }
                let x = x_index(&mut xs, &r[value_col]);
                if r[y_col].is_empty() {
                    continue;
                }
                push_point(&mut series, &r[proc_col], x, number(&r[y_col], "value")?);
            }
            let stat = if kind == PlotKind::Sd { "SD" } else { "Mean" };
            title = format!(
                "{stat} of n^-1/2 D, {} (group {})",
                metric.unwrap_or_default(),
                group.unwrap_or_default()
            );
            y_label = stat.to_string();
        }
        PlotKind::Entropy => {
            let (target_col, group_col) = (table.col("target")?, table.col("group")?);
            let (h_col, sv_col) = (table.col("h_cond")?, table.col("sv")?);
            let group = filter.group.clone().unwrap_or_default();
            for r in &table.rows {
                if r[group_col] != group || filter.target.as_ref().is_some_and(|t| &r[target_col] != t) {
                    continue;
                }
                let x = x_index(&mut xs, &r[value_col]);
                let t = &r[target_col];
                push_point(&mut series, &format!("H({t}|X)"), x, number(&r[h_col], "h_cond")?);
                push_point(&mut series, &format!("SV({t}|X)"), x, number(&r[sv_col], "sv")?);
            }
            title = if group.is_empty() {
                "Conditional entropy and sum of variances".to_string()
            } else {
                format!("Conditional entropy and sum of variances (group {group})")
            };
            y_label = "nats".to_string();
        }
    }
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(CliError::validation("empty series: no rows match the plot filters"));
    }
    Ok(Chart {
        title,
        x_label: if param.is_empty() { "setting".into() } else { param },
        y_label,
        x_values: xs,
        series,
    })
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn numeric_x(labels: &[String]) -> Option<Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            parse_rational(l)
                .map(to_f64)
                .ok()
                .or_else(|| l.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        })
        .collect()
}

/// Renders the chart as SVG; identical charts give identical bytes.
pub fn render_svg(chart: &Chart) -> String {
    let (width, height) = (760.0, 460.0);
    let (left, right, top, bottom) = (80.0, 200.0, 50.0, 70.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let xs = numeric_x(&chart.x_values)
        .unwrap_or_else(|| (0..chart.x_values.len()).map(|i| i as f64).collect());
    let (mut x_min, mut x_max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if x_max <= x_min {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let ys = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let y_min = y_lo.min(0.0);
    let mut y_max = if y_hi > 0.0 { y_hi * 1.05 } else { y_hi };
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let px = |x: f64| left + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| top + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        left + plot_w / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = y_min + (y_max - y_min) * i as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            left + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    for (label, &x) in chart.x_values.iter().zip(&xs) {
        let x = px(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            top + plot_h,
            top + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + plot_h + 20.0,
            escape(label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        height - 20.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(&chart.y_label)
    );
    for (k, s) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(i, y)| format!("{:.2},{:.2}", px(xs[i]), py(y)))
            .collect();
        let dash = if k >= PALETTE.len() { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            points.join(" ")
        );
        for &(i, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(xs[i]),
                py(y)
            );
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Builds and renders in one step; nothing is written on error.
pub fn plot(csv_text: &str, kind: PlotKind, filter: &PlotFilter) -> CliResult<String> {
    Ok(render_svg(&build_chart(csv_text, kind, filter)?))
}
