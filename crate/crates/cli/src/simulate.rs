//! `covbal simulate`: Monte Carlo studies over every sweep point of a configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use covbal_core::montecarlo::{run_study, write_summaries_csv, StudyConfig, SummaryRow};

use crate::config::{LoadedConfig, SweepPoint};
use crate::error::{CliError, CliResult};
use crate::output::{emit, Format};

/// All summary rows of a run, in sweep-point, procedure, metric order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub name: Option<String>,
    pub seed: u64,
    pub replicates: usize,
    pub rows: Vec<SummaryRow>,
}

/// Validates every sweep point, then runs them in order with the same master seed.
pub fn simulate(cfg: &LoadedConfig, seed: Option<u64>, threads: Option<usize>) -> CliResult<SimulationReport> {
    let seed = seed.unwrap_or(cfg.config.seed);
    let mut studies: Vec<(SweepPoint, StudyConfig)> = Vec::new();
    for point in cfg.points() {
        let setup = cfg.setup(&point)?;
        let study = cfg.study(&setup, seed, threads)?;
        studies.push((point, study));
    }
    let mut rows = Vec::new();
    for (point, study) in &studies {
        let summary = run_study(study)?;
        rows.extend(summary.rows.into_iter().map(|mut r| {
            r.param = point.param_name();
            r.param_value = point.label();
            r
        }));
    }
    Ok(SimulationReport {
        name: cfg.config.name.clone(),
        seed,
        replicates: cfg.config.replicates,
        rows,
    })
}

pub fn render_report(report: &SimulationReport, format: Format) -> CliResult<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_summaries_csv(&report.rows, &mut buf)?;
            Ok(buf)
        }
        Format::Json => {
            let mut buf = serde_json::to_vec_pretty(report).map_err(|e| CliError::Runtime(e.to_string()))?;
            buf.push(b'\n');
            Ok(buf)
        }
    }
}

/// Writes the report to `--out` in the chosen format, or to the configured output paths.
pub fn write_outputs(cfg: &LoadedConfig, report: &SimulationReport, out: Option<&Path>, format: Format) -> CliResult<()> {
    if let Some(path) = out {
        return emit(&render_report(report, format)?, Some(path));
    }
    if let Some(path) = &cfg.config.output.csv {
        emit(&render_report(report, Format::Csv)?, Some(path))?;
    }
    if let Some(path) = &cfg.config.output.json {
        emit(&render_report(report, Format::Json)?, Some(path))?;
    }
    Ok(())
}

fn cell(mean: f64, sd: Option<f64>) -> String {
    match sd {
        Some(sd) => format!("{mean:.3}({sd:.3})"),
        None => format!("{mean:.3}"),
    }
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// One `Mean(SD)` table per metric and group: procedures down, sweep values across, each
/// procedure preceded by its closed-form reference when one applies.
pub fn format_grid(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let param = rows.iter().find_map(|r| r.param.clone()).unwrap_or_default();
    let columns = first_seen(rows.iter().map(|r| r.param_value.clone()));
    let blocks = first_seen(rows.iter().map(|r| (r.metric.clone(), r.group)));
    let procedures = first_seen(rows.iter().map(|r| r.procedure.clone()));
    let width = 16;
    let label_width = procedures
        .iter()
        .map(|p| p.len() + 2)
        .chain([16])
        .max()
        .unwrap_or(16);
    for (metric, group) in blocks {
        let _ = writeln!(out, "n^-1/2 D  {metric}  group {group}");
        let head = if param.is_empty() { "procedure".to_string() } else { format!("procedure \\ {param}") };
        let _ = write!(out, "{head:<label_width$}");
        for c in &columns {
            let _ = write!(out, "{:>width$}", c.clone().unwrap_or_else(|| "Mean(SD)".into()));
        }
        out.push('\n');
        for p in &procedures {
            let find = |c: &Option<String>| {
                rows.iter()
                    .find(|r| &r.procedure == p && r.metric == metric && r.group == group && &r.param_value == c)
            };
            if let Some(kind) = columns.iter().filter_map(|c| find(c)?.theory_ref.clone()).next() {
                let _ = write!(out, "{:<label_width$}", format!("[{kind}]"));
                for c in &columns {
                    let v = find(c).and_then(|r| r.theory_value);
                    let text = v.map_or_else(|| "-".to_string(), |v| format!("0({v:.3})"));
                    let _ = write!(out, "{text:>width$}");
                }
                out.push('\n');
            }
            let _ = write!(out, "{p:<label_width$}");
            for c in &columns {
                let text = find(c).map_or_else(|| "-".to_string(), |r| cell(r.mean, r.sd));
                let _ = write!(out, "{text:>width$}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
