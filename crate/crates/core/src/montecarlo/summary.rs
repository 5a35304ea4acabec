use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Sample moments of one metric across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation with divisor `R − 1`; absent for a single sample.
    pub sd: Option<f64>,
    /// `sd/√R`.
    pub se_mean: Option<f64>,
    /// `sd/√(2(R − 1))`.
    pub se_sd: Option<f64>,
}

pub fn summarize(samples: &[f64]) -> Result<Summary> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NotANumber("sample value".into()));
    }
    let r = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / r;
    if samples.len() == 1 {
        return Ok(Summary {
            mean,
            sd: None,
            se_mean: None,
            se_sd: None,
        });
    }
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (r - 1.0)).sqrt();
    Ok(Summary {
        mean,
        sd: Some(sd),
        se_mean: Some(sd / r.sqrt()),
        se_sd: Some(sd / (2.0 * (r - 1.0)).sqrt()),
    })
}

/// One CSV/JSON output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// Name of the swept parameter, when the study is part of a sweep.
    pub param: Option<String>,
    pub param_value: Option<String>,
    pub n: usize,
    pub procedure: String,
    pub metric: String,
    /// 1-based arm.
    pub group: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub se_mean: Option<f64>,
    pub se_sd: Option<f64>,
    pub theory_ref: Option<String>,
    pub theory_value: Option<f64>,
}

/// Header of the summary CSV.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "param",
    "param_value",
    "n",
    "procedure",
    "metric",
    "group",
    "mean",
    "sd",
    "se_mean",
    "se_sd",
    "theory_ref",
    "theory_value",
    "mean_sd",
];

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// Writes rows as CSV; numbers carry six decimals and `mean_sd` is the rounded `mean(sd)` cell.
pub fn write_summaries_csv<'a, W: Write>(rows: impl IntoIterator<Item = &'a SummaryRow>, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let cell = match r.sd {
            Some(sd) => format!("{:.3}({:.3})", r.mean, sd),
            None => format!("{:.3}", r.mean),
        };
        out.write_record([
            r.param.clone().unwrap_or_default(),
            r.param_value.clone().unwrap_or_default(),
            r.n.to_string(),
            r.procedure.clone(),
            r.metric.clone(),
            r.group.to_string(),
            format!("{:.6}", r.mean),
            fmt(r.sd),
            fmt(r.se_mean),
            fmt(r.se_sd),
            r.theory_ref.clone().unwrap_or_default(),
            fmt(r.theory_value),
            cell,
        ])?;
    }
    out.flush()?;
    Ok(())
}
