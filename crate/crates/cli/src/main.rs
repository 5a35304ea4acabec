use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covbal_cli::config::{load_config, synthetic_cohort, LoadedConfig};
use covbal_cli::entropy::{entropy_from_config, entropy_rows};
use covbal_cli::output::{emit, render_rows, Format};
use covbal_cli::plot::{plot, PlotFilter, PlotKind};
use covbal_cli::recommend::{recommend, RecommendRequest};
use covbal_cli::simulate::{format_grid, simulate, write_outputs};
use covbal_cli::theory::theory;
use covbal_cli::{CliError, CliResult};
use covbal_core::scenarios::synthetic::{demographic_recode_map, write_synthetic_cohort};
use covbal_core::scenarios::{load_cohort, PopulationModel, RecodeMap};
use covbal_core::AllocationRatios;

/// Multi-arm randomization studies with unequal allocation ratios.
#[derive(Debug, Parser)]
#[command(name = "covbal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte Carlo replicates.
    #[arg(long, global = true, env = "COVBAL_THREADS")]
    threads: Option<usize>,

    /// Machine-readable output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every procedure of the configuration and print Mean(SD) grids.
    Simulate,
    /// Closed-form reference values for every configured metric.
    Theory,
    /// Conditional entropy and sum-of-variance diagnostics.
    Entropy(CohortArgs),
    /// Rank subsets of observed covariates by H(U|X).
    Recommend(RecommendArgs),
    /// Draw an SVG line chart from a summary or entropy CSV.
    Plot(PlotArgs),
    /// Write a synthetic six-column demographic cohort.
    SynthCohort(SynthArgs),
}

#[derive(Debug, Args)]
struct CohortArgs {
    /// Cohort CSV, used instead of the configuration's scenario.
    #[arg(long, requires = "recode")]
    cohort: Option<PathBuf>,

    /// Raw value to level map (JSON) for the cohort.
    #[arg(long)]
    recode: Option<PathBuf>,

    /// Observed covariates (comma-separated).
    #[arg(long, value_delimiter = ',')]
    observed: Vec<String>,

    /// Unobserved covariates (comma-separated).
    #[arg(long, value_delimiter = ',')]
    unobserved: Vec<String>,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[command(flatten)]
    source: CohortArgs,

    /// Subset size.
    #[arg(long)]
    k: usize,

    /// Sample size for the regime annotation; defaults to the configuration's n or the cohort size.
    #[arg(long)]
    n: Option<usize>,

    /// Block size for the regime annotation; defaults to the configured stratified-block size.
    #[arg(long)]
    block_size: Option<u32>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV written by `simulate` or `entropy`.
    #[arg(long)]
    input: PathBuf,

    #[arg(long, value_enum, default_value_t = PlotKind::Sd)]
    kind: PlotKind,

    /// Metric label to plot, e.g. `U1=1`.
    #[arg(long)]
    metric: Option<String>,

    /// Group to plot (1-based); for entropy files, the weighting group.
    #[arg(long)]
    group: Option<String>,

    /// Entropy target to plot.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 281)]
    rows: usize,

    /// Also write the matching recode map (JSON) here.
    #[arg(long)]
    recode_out: Option<PathBuf>,
}

fn need_config(cli: &Cli) -> CliResult<LoadedConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::validation("--config is required for this command"))?;
    load_config(path)
}

fn cohort_model(args: &CohortArgs) -> CliResult<Option<PopulationModel>> {
    let (Some(csv), Some(recode)) = (&args.cohort, &args.recode) else {
        return Ok(None);
    };
    let map = RecodeMap::from_path(recode).map_err(|e| CliError::validation(format!("{}: {e}", recode.display())))?;
    let cohort = load_cohort(csv, &map).map_err(|e| CliError::validation(format!("{}: {e}", csv.display())))?;
    Ok(Some(PopulationModel::EmpiricalCohort(cohort)))
}

fn names_or(given: &[String], fallback: impl FnOnce() -> Vec<String>) -> Vec<String> {
    if given.is_empty() {
        fallback()
    } else {
        given.to_vec()
    }
}

fn run_entropy(cli: &Cli, args: &CohortArgs) -> CliResult<()> {
    let rows = match cohort_model(args)? {
        Some(model) => {
            if args.observed.is_empty() || args.unobserved.is_empty() {
                return Err(CliError::validation("--observed and --unobserved are required with --cohort"));
            }
            let pmf = model.joint(&args.observed, &args.unobserved)?;
            let ratios = match &cli.config {
                Some(p) => Some(load_config(p)?.config.ratios.0),
                None => None,
            };
            entropy_rows(&pmf, ratios.as_ref(), None, None)?
        }
        None => entropy_from_config(&need_config(cli)?)?,
    };
    emit(&render_rows(&rows, cli.format)?, cli.out.as_deref())
}

fn run_recommend(cli: &Cli, args: &RecommendArgs) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let (model, observed, unobserved, n, sizes_ratios, default_block) = match (cohort_model(&args.source)?, &cfg) {
        (Some(model), cfg) => {
            let (obs, unobs) = model.default_split();
            let n = match &model {
                PopulationModel::EmpiricalCohort(c) => c.len(),
                _ => cfg.as_ref().map_or(1, |c| c.config.n),
            };
            let ratios = cfg.as_ref().map(|c| c.config.ratios.0.clone());
            (model, obs, unobs, n, ratios, None)
        }
        (None, Some(cfg)) => {
            let setup = cfg.setup(&cfg.points()[0])?;
            let schema = setup.scenario.schema();
            let names = |cs: &[covbal_core::Covariate]| cs.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
            let block = cfg.reference_block_sizes(schema)?.default_size();
            (
                (**setup.scenario.model()).clone(),
                names(schema.observed()),
                names(schema.unobserved()),
                setup.n,
                Some(cfg.config.ratios.0.clone()),
                Some(block),
            )
        }
        (None, None) => return Err(CliError::validation("give --config or --cohort with --recode")),
    };
    let target = names_or(&args.source.unobserved, || unobserved);
    let candidates = names_or(&args.source.observed, || {
        observed.into_iter().filter(|c| !target.contains(c)).collect()
    });
    if target.is_empty() {
        return Err(CliError::validation("no target covariates; pass --unobserved"));
    }
    let block_size = args.block_size.or(default_block).unwrap_or(10);
    let ratios = match sizes_ratios {
        Some(r) => r,
        None => AllocationRatios::equal(1)?,
    };
    let rows = recommend(
        &model,
        &RecommendRequest {
            candidates: &candidates,
            target: &target,
            k: args.k,
            n: args.n.unwrap_or(n),
            block_size,
            ratios: &ratios,
        },
    )?;
    emit(&render_rows(&rows, cli.format)?, cli.out.as_deref())
}

fn run_plot(cli: &Cli, args: &PlotArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let filter = PlotFilter {
        metric: args.metric.clone(),
        group: args.group.clone(),
        target: args.target.clone(),
    };
    let svg = plot(&text, args.kind, &filter)?;
    emit(svg.as_bytes(), cli.out.as_deref())
}

fn run_synth(cli: &Cli, args: &SynthArgs) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut buf = Vec::new();
    write_synthetic_cohort(&mut buf, args.rows, seed)?;
    synthetic_cohort(args.rows, seed)?;
    emit(&buf, cli.out.as_deref())?;
    if let Some(path) = &args.recode_out {
        let mut json = serde_json::to_vec_pretty(&demographic_recode_map()).map_err(|e| CliError::Runtime(e.to_string()))?;
        json.push(b'\n');
        emit(&json, Some(path))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate => {
            let cfg = need_config(cli)?;
            let report = simulate(&cfg, cli.seed, cli.threads)?;
            print!("{}", format_grid(&report.rows));
            write_outputs(&cfg, &report, cli.out.as_deref(), cli.format)
        }
        Command::Theory => {
            let rows = theory(&need_config(cli)?)?;
            emit(&render_rows(&rows, cli.format)?, cli.out.as_deref())
        }
        Command::Entropy(args) => run_entropy(cli, args),
        Command::Recommend(args) => run_recommend(cli, args),
        Command::Plot(args) => run_plot(cli, args),
        Command::SynthCohort(args) => run_synth(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}

