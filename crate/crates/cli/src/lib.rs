//! Command-line front end for covbal: configuration-driven studies, closed-form references,
//! entropy diagnostics, covariate-subset recommendations and SVG plots.

pub mod config;
pub mod entropy;
pub mod error;
pub mod output;
pub mod plot;
pub mod recommend;
pub mod simulate;
pub mod theory;

pub use config::{load_config, parse_config, LoadedConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use output::Format;
