//! JSON run configuration.
//!
//! Checks that need only one JSON value (ratios, weight sums, sweep values) run during
//! deserialization, so their errors carry a line and column. Checks that combine several
//! values (biased probabilities against ratios, block sizes against the period, names against
//! the scenario) run while the configuration is expanded into studies and cite the JSON path.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use covbal_core::montecarlo::{Metric, NamedProcedure, StudyConfig};
use covbal_core::procedures::{BiasedProbabilities, BlockSizes, CarWeights, ProcedureSpec};
use covbal_core::ratio::{parse_rational, to_f64};
use covbal_core::scenarios::synthetic::{demographic_recode_map, SYNTHETIC_COLUMNS, SYNTHETIC_OBSERVED};
use covbal_core::scenarios::{
    delta_model, load_cohort, load_cohort_from_reader, threshold_model, ArrivalPolicy, PopulationModel, RecodeMap,
    Scenario, TabularJoint, DEFAULT_SIGMA2,
};
use covbal_core::theory::JointPmf;
use covbal_core::{AllocationRatios, Block, Covariate, CovariateSchema, Level, Rational, Scope};

use crate::error::{CliError, CliResult};

/// A number written either as a JSON number or as text (`"3/10"`, `"0.25"`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Text(String),
    Value(f64),
}

impl Number {
    /// Exact value; JSON numbers are read through their shortest decimal form.
    pub fn rational(&self) -> Result<Rational, String> {
        match self {
            Number::Text(t) => parse_rational(t).map_err(|e| e.to_string()),
            Number::Value(v) if v.is_finite() => parse_rational(&format!("{v}")).map_err(|e| e.to_string()),
            Number::Value(v) => Err(format!("{v} is not finite")),
        }
    }

    pub fn float(&self) -> Result<f64, String> {
        match self {
            Number::Value(v) => Ok(*v),
            Number::Text(t) => match parse_rational(t) {
                Ok(r) => Ok(to_f64(r)),
                Err(_) => t.trim().parse().map_err(|_| format!("cannot parse {t:?} as a number")),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            Number::Text(t) => t.trim().to_string(),
            Number::Value(v) => format!("{v}"),
        }
    }
}

/// Allocation ratios, validated on parse.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "Vec<Number>")]
pub struct Ratios(pub AllocationRatios);

impl TryFrom<Vec<Number>> for Ratios {
    type Error = String;

    fn try_from(values: Vec<Number>) -> Result<Self, String> {
        let ratios = values.iter().map(Number::rational).collect::<Result<Vec<_>, _>>()?;
        AllocationRatios::new(ratios).map(Ratios).map_err(|e| e.to_string())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    overall: Number,
    #[serde(default)]
    margins: Option<Vec<Number>>,
    #[serde(default)]
    margins_total: Option<Number>,
    stratum: Number,
}

/// Imbalance weights: either one weight per observed margin, or a total split evenly over
/// however many observed covariates the scenario has.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawWeights")]
pub enum Weights {
    Explicit(CarWeights),
    Shared {
        overall: Rational,
        margins_total: Rational,
        stratum: Rational,
    },
}

impl TryFrom<RawWeights> for Weights {
    type Error = String;

    fn try_from(raw: RawWeights) -> Result<Self, String> {
        let overall = raw.overall.rational()?;
        let stratum = raw.stratum.rational()?;
        match (raw.margins, raw.margins_total) {
            (Some(margins), None) => {
                let margins = margins.iter().map(Number::rational).collect::<Result<Vec<_>, _>>()?;
                CarWeights::new(overall, margins, stratum)
                    .map(Weights::Explicit)
                    .map_err(|e| e.to_string())
            }
            (None, Some(total)) => {
                let margins_total = total.rational()?;
                CarWeights::new(overall, vec![margins_total], stratum).map_err(|e| e.to_string())?;
                Ok(Weights::Shared {
                    overall,
                    margins_total,
                    stratum,
                })
            }
            _ => Err("give exactly one of \"margins\" and \"margins_total\"".into()),
        }
    }
}

impl Weights {
    fn resolve(&self, covariates: usize) -> covbal_core::Result<CarWeights> {
        match self {
            Weights::Explicit(w) => Ok(w.clone()),
            Weights::Shared {
                overall,
                margins_total,
                stratum,
            } => {
                let each = margins_total / Rational::from_integer(covariates as i64);
                CarWeights::new(*overall, vec![each; covariates], *stratum)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockOverride {
    /// Observed levels of the stratum, 1-based.
    pub stratum: Vec<Level>,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcedureConfig {
    Cr {
        #[serde(default)]
        name: Option<String>,
    },
    StrPb {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        block_size: Option<u32>,
        #[serde(default)]
        block_multiple: Option<u32>,
        #[serde(default)]
        overrides: Vec<BlockOverride>,
    },
    Car {
        #[serde(default)]
        name: Option<String>,
        weights: Weights,
        biased: Vec<Number>,
    },
    PocockSimon {
        #[serde(default)]
        name: Option<String>,
        biased: Vec<Number>,
    },
}

impl ProcedureConfig {
    pub fn name(&self) -> String {
        let (name, default) = match self {
            ProcedureConfig::Cr { name } => (name, "CR"),
            ProcedureConfig::StrPb { name, .. } => (name, "STR-PB"),
            ProcedureConfig::Car { name, .. } => (name, "CAR"),
            ProcedureConfig::PocockSimon { name, .. } => (name, "PS"),
        };
        name.clone().unwrap_or_else(|| default.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    Overall,
    ObservedMargin,
    ObservedStratum,
    UnobservedMargin,
    UnobservedStratum,
    JointStratumMargin,
    JointStratumStratum,
}

/// A reported imbalance: a scope plus the 1-based groups to report it for (all when absent).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub scope: ScopeKind,
    #[serde(default)]
    pub covariate: Option<String>,
    #[serde(default)]
    pub level: Option<Level>,
    #[serde(default)]
    pub stratum: Option<Vec<Level>>,
    #[serde(default)]
    pub unobserved: Option<Vec<Level>>,
    #[serde(default)]
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    pub name: String,
    pub levels: Level,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Two observed and two unobserved binary covariates tied together by `delta`.
    Delta { delta: Number },
    /// Ten binary observed covariates and two thresholded unobserved ones.
    Threshold {
        sigma1: Number,
        #[serde(default)]
        sigma2: Option<Number>,
    },
    /// An explicit joint table, observed covariates first, first covariate most significant.
    Tabular {
        observed: Vec<CovariateConfig>,
        unobserved: Vec<CovariateConfig>,
        table: Vec<Number>,
    },
    /// A recoded CSV cohort; paths are relative to the configuration file.
    Cohort {
        csv: PathBuf,
        recode: PathBuf,
        #[serde(default)]
        arrival: ArrivalPolicy,
    },
    /// A generated stand-in for a six-column demographic cohort.
    SyntheticCohort {
        rows: usize,
        seed: u64,
        #[serde(default)]
        arrival: ArrivalPolicy,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub observed: Option<Vec<String>>,
    #[serde(default)]
    pub unobserved: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Delta,
    Sigma1,
    Sigma2,
    N,
    Observed,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Delta => "delta",
            SweepParam::Sigma1 => "sigma1",
            SweepParam::Sigma2 => "sigma2",
            SweepParam::N => "n",
            SweepParam::Observed => "observed",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    param: SweepParam,
    values: Vec<serde_json::Value>,
}

/// One swept value, already checked for its parameter's type.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Number(Number),
    Count(usize),
    Names(Vec<String>),
}

impl SweepValue {
    pub fn label(&self) -> String {
        match self {
            SweepValue::Number(n) => n.label(),
            SweepValue::Count(n) => n.to_string(),
            SweepValue::Names(names) => names.join("+"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawSweep")]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<SweepValue>,
}

impl TryFrom<RawSweep> for Sweep {
    type Error = String;

    fn try_from(raw: RawSweep) -> Result<Self, String> {
        if raw.values.is_empty() {
            return Err("sweep has no values".into());
        }
        let mut values = Vec::with_capacity(raw.values.len());
        for (i, v) in raw.values.into_iter().enumerate() {
            let bad = |what: &str| format!("sweep value {i}: expected {what}");
            let value = match raw.param {
                SweepParam::Delta => {
                    let n: Number = serde_json::from_value(v).map_err(|_| bad("a number or \"num/den\""))?;
                    n.rational().map_err(|e| format!("sweep value {i}: {e}"))?;
                    SweepValue::Number(n)
                }
                SweepParam::Sigma1 | SweepParam::Sigma2 => {
                    let n: Number = serde_json::from_value(v).map_err(|_| bad("a number"))?;
                    let f = n.float().map_err(|e| format!("sweep value {i}: {e}"))?;
                    if !(f > 0.0 && f.is_finite()) {
                        return Err(format!("sweep value {i}: noise scale must be positive and finite"));
                    }
                    SweepValue::Number(n)
                }
                SweepParam::N => {
                    let n: usize = serde_json::from_value(v).map_err(|_| bad("a positive integer"))?;
                    if n == 0 {
                        return Err(bad("a positive integer"));
                    }
                    SweepValue::Count(n)
                }
                SweepParam::Observed => {
                    let names: Vec<String> =
                        serde_json::from_value(v).map_err(|_| bad("a list of covariate names"))?;
                    if names.is_empty() {
                        return Err(bad("a non-empty list of covariate names"));
                    }
                    SweepValue::Names(names)
                }
            };
            values.push(value);
        }
        Ok(Sweep {
            param: raw.param,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

/// The whole configuration file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub seed: u64,
    pub n: usize,
    pub replicates: usize,
    pub ratios: Ratios,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub procedures: Vec<ProcedureConfig>,
    #[serde(default)]
    pub metrics: Vec<MetricConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: String,
    pub base_dir: PathBuf,
}

/// Parses configuration text; `source` names the input in error messages.
pub fn parse_config(text: &str, source: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let at = if path == "." || path == "?" { String::new() } else { format!(" at {path}") };
        CliError::validation(format!("{source}{at}: {inner}"))
    })?;
    if config.n == 0 {
        return Err(CliError::validation(format!("{source} at n: n must be at least 1")));
    }
    if config.replicates == 0 {
        return Err(CliError::validation(format!(
            "{source} at replicates: replicates must be at least 1"
        )));
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let source = path.display().to_string();
    let config = parse_config(&text, &source)?;
    Ok(LoadedConfig {
        config,
        source,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

/// One point of a sweep (or the single point of an unswept configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: Option<SweepParam>,
    pub value: Option<SweepValue>,
}

impl SweepPoint {
    pub fn param_name(&self) -> Option<String> {
        self.param.map(|p| p.as_str().to_string())
    }

    pub fn label(&self) -> Option<String> {
        self.value.as_ref().map(SweepValue::label)
    }
}

/// Everything a command needs at one sweep point.
#[derive(Debug, Clone)]
pub struct PointSetup {
    pub point: SweepPoint,
    pub scenario: Arc<Scenario>,
    pub n: usize,
}

impl LoadedConfig {
    fn err(&self, path: &str, e: impl std::fmt::Display) -> CliError {
        CliError::validation(format!("{} at {path}: {e}", self.source))
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        match &self.config.sweep {
            None => vec![SweepPoint {
                param: None,
                value: None,
            }],
            Some(s) => s
                .values
                .iter()
                .map(|v| SweepPoint {
                    param: Some(s.param),
                    value: Some(v.clone()),
                })
                .collect(),
        }
    }

    fn model(&self, point: &SweepPoint) -> CliResult<PopulationModel> {
        let path = "scenario.model";
        let swept = |p: SweepParam| match (&point.param, &point.value) {
            (Some(q), Some(SweepValue::Number(n))) if *q == p => Some(n.clone()),
            _ => None,
        };
        match &self.config.scenario.model {
            ModelConfig::Delta { delta } => {
                if matches!(point.param, Some(SweepParam::Sigma1 | SweepParam::Sigma2)) {
                    return Err(self.err("sweep.param", "the delta model has no noise scales"));
                }
                let d = swept(SweepParam::Delta).unwrap_or_else(|| delta.clone());
                let d = d.rational().map_err(|e| self.err(path, e))?;
                delta_model(d).map_err(|e| self.err(path, e))
            }
            ModelConfig::Threshold { sigma1, sigma2 } => {
                if point.param == Some(SweepParam::Delta) {
                    return Err(self.err("sweep.param", "the threshold model has no delta"));
                }
                let s1 = swept(SweepParam::Sigma1).unwrap_or_else(|| sigma1.clone());
                let s2 = swept(SweepParam::Sigma2)
                    .or_else(|| sigma2.clone())
                    .unwrap_or(Number::Value(DEFAULT_SIGMA2));
                let s1 = s1.float().map_err(|e| self.err(path, e))?;
                let s2 = s2.float().map_err(|e| self.err(path, e))?;
                threshold_model(s1, s2).map_err(|e| self.err(path, e))
            }
            other => {
                if matches!(
                    point.param,
                    Some(SweepParam::Delta | SweepParam::Sigma1 | SweepParam::Sigma2)
                ) {
                    return Err(self.err("sweep.param", "this model has no such parameter"));
                }
                self.fixed_model(other)
            }
        }
    }

    fn fixed_model(&self, model: &ModelConfig) -> CliResult<PopulationModel> {
        let path = "scenario.model";
        match model {
            ModelConfig::Tabular {
                observed,
                unobserved,
                table,
            } => {
                let covs = |c: &[CovariateConfig]| c.iter().map(|c| Covariate::new(c.name.clone(), c.levels)).collect();
                let schema = CovariateSchema::new(covs(observed), covs(unobserved)).map_err(|e| self.err(path, e))?;
                let cells = table
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.float().map_err(|e| self.err(&format!("{path}.table[{i}]"), e)))
                    .collect::<CliResult<Vec<_>>>()?;
                let pmf = JointPmf::new(Arc::new(schema), cells).map_err(|e| self.err(&format!("{path}.table"), e))?;
                Ok(PopulationModel::TabularJoint(TabularJoint::new(pmf)))
            }
            ModelConfig::Cohort { csv, recode, arrival } => {
                let recode_path = self.base_dir.join(recode);
                let map = RecodeMap::from_path(&recode_path).map_err(|e| self.err(&format!("{path}.recode"), e))?;
                let cohort = load_cohort(self.base_dir.join(csv), &map).map_err(|e| self.err(&format!("{path}.csv"), e))?;
                Ok(PopulationModel::EmpiricalCohort(cohort.with_arrival(*arrival)))
            }
            ModelConfig::SyntheticCohort { rows, seed, arrival } => {
                let cohort = synthetic_cohort(*rows, *seed).map_err(|e| self.err(path, e))?;
                Ok(PopulationModel::EmpiricalCohort(cohort.with_arrival(*arrival)))
            }
            ModelConfig::Delta { .. } | ModelConfig::Threshold { .. } => unreachable!("handled by the caller"),
        }
    }

    /// The scenario and sample size at one sweep point.
    pub fn setup(&self, point: &SweepPoint) -> CliResult<PointSetup> {
        let model = Arc::new(self.model(point)?);
        let sc = &self.config.scenario;
        let (default_obs, default_unobs) = default_split(&self.config.scenario.model, &model);
        let observed = match (&point.param, &point.value) {
            (Some(SweepParam::Observed), Some(SweepValue::Names(names))) => names.clone(),
            _ => sc.observed.clone().unwrap_or(default_obs),
        };
        let unobserved = sc.unobserved.clone().unwrap_or(default_unobs);
        let scenario = Scenario::new(model, &observed, &unobserved).map_err(|e| {
            let path = if point.param == Some(SweepParam::Observed) {
                "sweep.values"
            } else {
                "scenario"
            };
            self.err(path, e)
        })?;
        let n = match point.value {
            Some(SweepValue::Count(n)) => n,
            _ => self.config.n,
        };
        Ok(PointSetup {
            point: point.clone(),
            scenario: Arc::new(scenario),
            n,
        })
    }

    fn ratios(&self) -> &AllocationRatios {
        &self.config.ratios.0
    }

    fn biased(&self, path: &str, values: &[Number]) -> CliResult<BiasedProbabilities> {
        let values = values
            .iter()
            .map(Number::rational)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| self.err(path, e))?;
        BiasedProbabilities::from_rationals(values, self.ratios()).map_err(|e| self.err(path, e))
    }

    /// Block sizes of a stratified-block procedure entry.
    pub fn block_sizes(&self, index: usize, schema: &CovariateSchema) -> CliResult<BlockSizes> {
        let path = format!("procedures[{index}]");
        let ProcedureConfig::StrPb {
            block_size,
            block_multiple,
            overrides,
            ..
        } = &self.config.procedures[index]
        else {
            return Err(self.err(&path, "not a stratified-block procedure"));
        };
        let ratios = self.ratios();
        let mut sizes = match (block_size, block_multiple) {
            (Some(size), None) => BlockSizes::from_size(ratios, *size),
            (None, Some(c)) => BlockSizes::uniform(ratios, *c),
            (None, None) => BlockSizes::uniform(ratios, 1),
            (Some(_), Some(_)) => {
                return Err(self.err(&path, "give at most one of \"block_size\" and \"block_multiple\""))
            }
        }
        .map_err(|e| self.err(&path, e))?;
        for (k, o) in overrides.iter().enumerate() {
            let at = format!("{path}.overrides[{k}]");
            let s = schema
                .stratum_of(Block::Observed, &o.stratum)
                .map_err(|e| self.err(&at, e))?;
            sizes = sizes.with_override(ratios, s, o.size).map_err(|e| self.err(&at, e))?;
        }
        Ok(sizes)
    }

    /// Block sizes of the first stratified-block procedure, or one period per block.
    pub fn reference_block_sizes(&self, schema: &CovariateSchema) -> CliResult<BlockSizes> {
        match self
            .config
            .procedures
            .iter()
            .position(|p| matches!(p, ProcedureConfig::StrPb { .. }))
        {
            Some(i) => self.block_sizes(i, schema),
            None => BlockSizes::uniform(self.ratios(), 1).map_err(|e| self.err("ratios", e)),
        }
    }

    pub fn procedures(&self, schema: &CovariateSchema) -> CliResult<Vec<NamedProcedure>> {
        let mut out = Vec::with_capacity(self.config.procedures.len());
        for (i, p) in self.config.procedures.iter().enumerate() {
            let path = format!("procedures[{i}]");
            let covariates = schema.observed().len();
            let spec = match p {
                ProcedureConfig::Cr { .. } => ProcedureSpec::CompleteRandomization,
                ProcedureConfig::StrPb { .. } => ProcedureSpec::StratifiedBlocks(self.block_sizes(i, schema)?),
                ProcedureConfig::Car { weights, biased, .. } => {
                    let weights = weights
                        .resolve(covariates)
                        .map_err(|e| self.err(&format!("{path}.weights"), e))?;
                    if weights.margins().len() != covariates {
                        return Err(self.err(
                            &format!("{path}.weights.margins"),
                            format!(
                                "{} margin weights for {covariates} observed covariates",
                                weights.margins().len()
                            ),
                        ));
                    }
                    ProcedureSpec::Adaptive {
                        weights,
                        biased: self.biased(&format!("{path}.biased"), biased)?,
                    }
                }
                ProcedureConfig::PocockSimon { biased, .. } => ProcedureSpec::Adaptive {
                    weights: CarWeights::pocock_simon(covariates).map_err(|e| self.err(&path, e))?,
                    biased: self.biased(&format!("{path}.biased"), biased)?,
                },
            };
            out.push(NamedProcedure::new(p.name(), spec));
        }
        let mut names: Vec<&str> = out.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(self.err("procedures", format!("duplicate procedure name {:?}", w[0])));
        }
        Ok(out)
    }

    pub fn metrics(&self, schema: &CovariateSchema) -> CliResult<Vec<Metric>> {
        let arms = self.ratios().arms();
        let mut out = Vec::new();
        for (i, m) in self.config.metrics.iter().enumerate() {
            let path = format!("metrics[{i}]");
            let scope = resolve_scope(m, schema).map_err(|e| self.err(&path, e))?;
            let groups = m.groups.clone().unwrap_or_else(|| (1..=arms).collect());
            for (k, &g) in groups.iter().enumerate() {
                if g == 0 || g > arms {
                    return Err(self.err(
                        &format!("{path}.groups[{k}]"),
                        format!("group {g} is not in 1..={arms}"),
                    ));
                }
                out.push(Metric::new(scope, g - 1));
            }
        }
        Ok(out)
    }

    /// A validated study for one sweep point.
    pub fn study(&self, setup: &PointSetup, seed: u64, threads: Option<usize>) -> CliResult<StudyConfig> {
        let schema = setup.scenario.schema();
        let procedures = self.procedures(schema)?;
        if procedures.is_empty() {
            return Err(self.err("procedures", "at least one procedure is required"));
        }
        let metrics = self.metrics(schema)?;
        if metrics.is_empty() {
            return Err(self.err("metrics", "at least one metric is required"));
        }
        let study = StudyConfig {
            scenario: setup.scenario.clone(),
            ratios: self.ratios().clone(),
            procedures,
            n: setup.n,
            replicates: self.config.replicates,
            seed,
            metrics,
            threads,
        };
        study.validate().map_err(|e| self.err("procedures", e))?;
        Ok(study)
    }

    pub fn allocation_ratios(&self) -> &AllocationRatios {
        self.ratios()
    }
}

/// The split used when the scenario does not name its covariates.
fn default_split(config: &ModelConfig, model: &PopulationModel) -> (Vec<String>, Vec<String>) {
    match config {
        ModelConfig::SyntheticCohort { .. } => {
            let names: Vec<String> = SYNTHETIC_COLUMNS.iter().map(|s| s.to_string()).collect();
            (names[..SYNTHETIC_OBSERVED].to_vec(), names[SYNTHETIC_OBSERVED..].to_vec())
        }
        _ => model.default_split(),
    }
}

/// The synthetic demographic cohort, recoded through the bundled map.
pub fn synthetic_cohort(rows: usize, seed: u64) -> covbal_core::Result<covbal_core::scenarios::EmpiricalCohort> {
    let mut buf = Vec::new();
    covbal_core::scenarios::synthetic::write_synthetic_cohort(&mut buf, rows, seed)?;
    load_cohort_from_reader(buf.as_slice(), &demographic_recode_map())
}

fn find(schema: &CovariateSchema, block: Block, name: &str) -> Result<usize, String> {
    match schema.find(name) {
        Some((b, i)) if b == block => Ok(i),
        Some(_) => Err(format!("covariate {name:?} is not in the {} block", block_name(block))),
        None => Err(format!("unknown covariate {name:?}")),
    }
}

fn block_name(block: Block) -> &'static str {
    match block {
        Block::Observed => "observed",
        Block::Unobserved => "unobserved",
    }
}

fn resolve_scope(m: &MetricConfig, schema: &CovariateSchema) -> Result<Scope, String> {
    let need = |field: &str| format!("scope {:?} needs \"{field}\"", m.scope);
    let covariate = |block| -> Result<(usize, Level), String> {
        let name = m.covariate.as_deref().ok_or_else(|| need("covariate"))?;
        let level = m.level.ok_or_else(|| need("level"))?;
        Ok((find(schema, block, name)?, level))
    };
    let stratum = |block, levels: &Option<Vec<Level>>, field: &str| {
        let levels = levels.as_ref().ok_or_else(|| need(field))?;
        schema.stratum_of(block, levels).map_err(|e| e.to_string())
    };
    let scope = match m.scope {
        ScopeKind::Overall => Scope::Overall,
        ScopeKind::ObservedMargin => {
            let (covariate, level) = covariate(Block::Observed)?;
            Scope::ObsMargin { covariate, level }
        }
        ScopeKind::ObservedStratum => Scope::ObsStratum(stratum(Block::Observed, &m.stratum, "stratum")?),
        ScopeKind::UnobservedMargin => {
            let (covariate, level) = covariate(Block::Unobserved)?;
            Scope::UnobsMargin { covariate, level }
        }
        ScopeKind::UnobservedStratum => Scope::UnobsStratum(stratum(Block::Unobserved, &m.unobserved, "unobserved")?),
        ScopeKind::JointStratumMargin => {
            let s = stratum(Block::Observed, &m.stratum, "stratum")?;
            let (covariate, level) = covariate(Block::Unobserved)?;
            Scope::JointStratumMargin {
                stratum: s,
                covariate,
                level,
            }
        }
        ScopeKind::JointStratumStratum => Scope::JointStratumStratum {
            stratum: stratum(Block::Observed, &m.stratum, "stratum")?,
            unobserved: stratum(Block::Unobserved, &m.unobserved, "unobserved")?,
        },
    };
    scope.validate(schema).map_err(|e| e.to_string())?;
    Ok(scope)
}

