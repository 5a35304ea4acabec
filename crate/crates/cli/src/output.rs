use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Machine-readable output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Serializes rows as CSV (header from the row type) or as a pretty JSON array.
pub fn render_rows<T: Serialize>(rows: &[T], format: Format) -> CliResult<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut out = csv::Writer::from_writer(Vec::new());
            for r in rows {
                out.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            out.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
        }
        Format::Json => {
            let mut buf = serde_json::to_vec_pretty(rows).map_err(|e| CliError::Runtime(e.to_string()))?;
            buf.push(b'\n');
            Ok(buf)
        }
    }
}

/// Writes bytes to `path`, or to standard output when there is no path.
pub fn emit(bytes: &[u8], path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}
