//! Seeded, parallel replication of allocation studies.
//!
//! Replicate `i` of a study draws its patients from ChaCha8 stream `2i` and its assignment
//! randomness from stream `2i + 1`, both keyed by the master seed. Every procedure of the study
//! sees the same patients and starts from the same assignment stream within a replicate.
//! Results are gathered into a replicate-indexed vector before aggregation, so summaries do
//! not depend on the number of worker threads.

mod summary;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use summary::{summarize, write_summaries_csv, Summary, SummaryRow, SUMMARY_COLUMNS};

use crate::error::{Error, Result};
use crate::ledger::{AllocationLedger, Scope};
use crate::procedures::ProcedureSpec;
use crate::ratio::AllocationRatios;
use crate::scenarios::Scenario;
use crate::schema::{CovariateSchema, PatientProfile, StratumId};
use crate::theory::{self, JointPmf};

/// One reported quantity: `n^{-1/2}·D_{n,g}(scope)` for arm `g` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metric {
    pub scope: Scope,
    pub arm: usize,
}

impl Metric {
    pub fn new(scope: Scope, arm: usize) -> Self {
        Self { scope, arm }
    }

    pub fn label(&self, schema: &CovariateSchema) -> String {
        self.scope.label(schema)
    }
}

/// A procedure with the name it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedProcedure {
    pub name: String,
    pub spec: ProcedureSpec,
}

impl NamedProcedure {
    pub fn new(name: impl Into<String>, spec: ProcedureSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }
}

/// Everything needed to run a study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub scenario: Arc<Scenario>,
    pub ratios: AllocationRatios,
    pub procedures: Vec<NamedProcedure>,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.procedures.is_empty() {
            return Err(Error::Config("no procedures".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        let schema = self.scenario.schema();
        for m in &self.metrics {
            m.scope.validate(schema)?;
            if m.arm >= self.ratios.arms() {
                return Err(Error::ArmOutOfRange {
                    arm: m.arm,
                    arms: self.ratios.arms(),
                });
            }
        }
        for p in &self.procedures {
            p.spec.start(schema, &self.ratios)?;
        }
        Ok(())
    }
}

/// Seed position of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateSeed {
    pub master: u64,
    pub index: u64,
}

impl ReplicateSeed {
    pub fn new(master: u64, index: u64) -> Self {
        Self { master, index }
    }

    fn stream(&self, offset: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index.wrapping_mul(2).wrapping_add(offset));
        rng
    }

    /// Stream used to draw patients.
    pub fn patient_rng(&self) -> ChaCha8Rng {
        self.stream(0)
    }

    /// Stream used for assignment randomness.
    pub fn allocation_rng(&self) -> ChaCha8Rng {
        self.stream(1)
    }
}

fn draw_patients(scenario: &Scenario, n: usize, seed: ReplicateSeed) -> Result<Vec<PatientProfile>> {
    let mut rng = seed.patient_rng();
    let mut sampler = scenario.sampler();
    (0..n).map(|_| sampler.next_profile(&mut rng)).collect()
}

/// Allocates `patients` in order and evaluates every metric on the full-profile ledger.
pub fn allocate_and_measure(
    schema: &Arc<CovariateSchema>,
    ratios: &AllocationRatios,
    procedure: &ProcedureSpec,
    patients: &[PatientProfile],
    metrics: &[Metric],
    seed: ReplicateSeed,
) -> Result<Vec<f64>> {
    let mut rng = seed.allocation_rng();
    let mut state = procedure.start(schema, ratios)?;
    let mut ledger = AllocationLedger::new(schema.clone(), ratios.clone());
    for p in patients {
        let arm = state.assign(&p.blinded(), &mut rng)?;
        ledger.record_assignment(p, arm)?;
    }
    let scale = (patients.len() as f64).sqrt();
    Ok(metrics
        .iter()
        .map(|m| ledger.imbalance_f64(&m.scope, m.arm) / scale)
        .collect())
}

/// One replicate of one procedure: `n^{-1/2}·D` for each metric.
pub fn run_replicate(
    scenario: &Scenario,
    ratios: &AllocationRatios,
    procedure: &ProcedureSpec,
    n: usize,
    metrics: &[Metric],
    seed: ReplicateSeed,
) -> Result<Vec<f64>> {
    let patients = draw_patients(scenario, n, seed)?;
    allocate_and_measure(scenario.schema(), ratios, procedure, &patients, metrics, seed)
}

fn replicate_all(config: &StudyConfig, index: u64) -> Result<Vec<f64>> {
    let seed = ReplicateSeed::new(config.seed, index);
    let patients = draw_patients(&config.scenario, config.n, seed)?;
    let mut out = Vec::with_capacity(config.procedures.len() * config.metrics.len());
    for p in &config.procedures {
        out.extend(allocate_and_measure(
            config.scenario.schema(),
            &config.ratios,
            &p.spec,
            &patients,
            &config.metrics,
            seed,
        )?);
    }
    Ok(out)
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {k} threads: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Raw replicate values, indexed `[replicate][procedure * metrics + metric]`.
pub fn run_replicates(config: &StudyConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let results: Vec<Result<Vec<f64>>> = in_pool(config.threads, || {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|i| replicate_all(config, i))
            .collect()
    })?;
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Replicate {
                index: i as u64,
                source: Box::new(e),
            })
        })
        .collect()
}

/// A closed-form reference for a reported standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryRef {
    pub kind: TheoryKind,
    /// Predicted standard deviation of `n^{-1/2}·D`.
    pub value: f64,
    pub regime_mismatch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryKind {
    Tau,
    TauCr,
    StrpbLargeN,
    StrpbSmallN,
}

impl TheoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TheoryKind::Tau => "tau",
            TheoryKind::TauCr => "tau_cr",
            TheoryKind::StrpbLargeN => "strpb_large_n",
            TheoryKind::StrpbSmallN => "strpb_small_n",
        }
    }
}

/// The reference that applies to a procedure and metric, if any.
pub fn theory_reference(
    pmf: &JointPmf,
    ratios: &AllocationRatios,
    procedure: &ProcedureSpec,
    metric: &Metric,
    n: usize,
) -> Option<TheoryRef> {
    let rho = ratios.get_f64(metric.arm);
    let scope = &metric.scope;
    match procedure {
        ProcedureSpec::CompleteRandomization => theory::tau_cr_sq(pmf, rho, scope).ok().map(|v| TheoryRef {
            kind: TheoryKind::TauCr,
            value: v.sqrt(),
            regime_mismatch: false,
        }),
        ProcedureSpec::StratifiedBlocks(sizes) => {
            if !(scope.involves_unobserved() || matches!(scope, Scope::ObsStratum(_))) {
                return None;
            }
            let strata = theory::scope_strata(pmf, scope);
            let regime = theory::classify_regime(pmf, n, sizes, &strata).regime?;
            let v = theory::strpb_variance(pmf, rho, scope, regime, n, sizes).ok()?;
            Some(TheoryRef {
                kind: match regime {
                    theory::StrPbRegime::LargeN => TheoryKind::StrpbLargeN,
                    theory::StrPbRegime::SmallN => TheoryKind::StrpbSmallN,
                },
                value: v.normalized_sd(n),
                regime_mismatch: v.regime_mismatch,
            })
        }
        ProcedureSpec::Adaptive { .. } if procedure.balances_strata() && scope.involves_unobserved() => {
            theory::tau_sq(pmf, rho, scope).ok().map(|v| TheoryRef {
                kind: TheoryKind::Tau,
                value: v.sqrt(),
                regime_mismatch: false,
            })
        }
        ProcedureSpec::Adaptive { .. } => None,
    }
}

/// Per-procedure, per-metric summaries of one study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
}

impl StudySummary {
    pub fn row(&self, procedure: &str, metric: &str, group: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.procedure == procedure && r.metric == metric && r.group == group)
    }
}

/// Runs every replicate and aggregates means, SDs and theory references.
pub fn run_study(config: &StudyConfig) -> Result<StudySummary> {
    let values = run_replicates(config)?;
    let pmf = config.scenario.joint().ok();
    let schema = config.scenario.schema();
    let k = config.metrics.len();
    let mut rows = Vec::with_capacity(config.procedures.len() * k);
    let mut column = Vec::with_capacity(values.len());
    for (pi, p) in config.procedures.iter().enumerate() {
        for (mi, m) in config.metrics.iter().enumerate() {
            column.clear();
            column.extend(values.iter().map(|v| v[pi * k + mi]));
            let summary = summarize(&column)?;
            let theory = pmf
                .as_ref()
                .and_then(|pmf| theory_reference(pmf, &config.ratios, &p.spec, m, config.n));
            rows.push(SummaryRow {
                param: None,
                param_value: None,
                n: config.n,
                procedure: p.name.clone(),
                metric: m.label(schema),
                group: m.arm + 1,
                mean: summary.mean,
                sd: summary.sd,
                se_mean: summary.se_mean,
                se_sd: summary.se_sd,
                theory_ref: theory.map(|t| t.kind.as_str().to_string()),
                theory_value: theory.map(|t| t.value),
            });
        }
    }
    Ok(StudySummary {
        n: config.n,
        replicates: config.replicates,
        seed: config.seed,
        rows,
    })
}

/// How the within-stratum variance behaves along the sample-size grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaTrend {
    /// Strictly decreasing, ending below a quarter of the first value.
    Decaying,
    /// The last value is within 20% of the middle value.
    Plateau,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaPoint {
    pub n: usize,
    /// Sample variance of `n^{-1/2}·D_{n,g}(s)`.
    pub variance: f64,
    /// Normal-theory standard error of the variance.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub points: Vec<GammaPoint>,
    pub trend: GammaTrend,
    /// Variance at the largest `n`.
    pub plateau: f64,
}

/// Parameters for [`estimate_gamma`].
#[derive(Debug, Clone)]
pub struct GammaConfig {
    pub scenario: Arc<Scenario>,
    pub ratios: AllocationRatios,
    pub procedure: ProcedureSpec,
    pub stratum: StratumId,
    pub arm: usize,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Empirical `Var[n^{-1/2}·D_{n,g}(s)]` across a grid of sample sizes.
pub fn estimate_gamma(config: &GammaConfig) -> Result<GammaEstimate> {
    if config.n_grid.len() < 2 {
        return Err(Error::Config("the sample-size grid needs at least 2 points".into()));
    }
    if config.replicates < 2 {
        return Err(Error::Config("variance estimates need at least 2 replicates".into()));
    }
    let mut points = Vec::with_capacity(config.n_grid.len());
    for (i, &n) in config.n_grid.iter().enumerate() {
        let study = StudyConfig {
            scenario: config.scenario.clone(),
            ratios: config.ratios.clone(),
            procedures: vec![NamedProcedure::new("procedure", config.procedure.clone())],
            n,
            replicates: config.replicates,
            seed: config.seed.wrapping_add(i as u64),
            metrics: vec![Metric::new(Scope::ObsStratum(config.stratum), config.arm)],
            threads: config.threads,
        };
        let values = run_replicates(&study)?;
        let column: Vec<f64> = values.iter().map(|v| v[0]).collect();
        let s = summarize(&column)?;
        let sd = s.sd.expect("at least two replicates");
        let variance = sd * sd;
        points.push(GammaPoint {
            n,
            variance,
            se: variance * (2.0 / (config.replicates as f64 - 1.0)).sqrt(),
        });
    }
    let first = points[0].variance;
    let last = points[points.len() - 1].variance;
    let mid = points[(points.len() - 1) / 2].variance;
    let decreasing = points.windows(2).all(|w| w[1].variance < w[0].variance);
    let trend = if decreasing && last < 0.25 * first {
        GammaTrend::Decaying
    } else if mid > 0.0 && ((last - mid) / mid).abs() <= 0.2 {
        GammaTrend::Plateau
    } else {
        GammaTrend::Inconclusive
    };
    Ok(GammaEstimate {
        points,
        trend,
        plateau: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procedures::BlockSizes;
    use crate::ratio::Rational;
    use crate::scenarios::delta_model;

    fn scenario() -> Arc<Scenario> {
        Arc::new(Scenario::with_default_split(Arc::new(delta_model(Rational::new(0, 1)).unwrap())).unwrap())
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::RngCore;
        let s = ReplicateSeed::new(7, 3);
        assert_eq!(s.patient_rng().next_u64(), s.patient_rng().next_u64());
        assert_ne!(s.patient_rng().next_u64(), s.allocation_rng().next_u64());
        assert_ne!(s.patient_rng().next_u64(), ReplicateSeed::new(7, 4).patient_rng().next_u64());
    }

    #[test]
    fn degenerate_ratio_has_no_overall_imbalance() {
        let ratios = AllocationRatios::parse(&["1", "0"]).unwrap();
        let v = run_replicate(
            &scenario(),
            &ratios,
            &ProcedureSpec::CompleteRandomization,
            50,
            &[Metric::new(Scope::Overall, 0)],
            ReplicateSeed::new(1, 0),
        )
        .unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn study_shape_and_validation() {
        let ratios = AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap();
        let sizes = BlockSizes::uniform(&ratios, 1).unwrap();
        let mut config = StudyConfig {
            scenario: scenario(),
            ratios,
            procedures: vec![
                NamedProcedure::new("CR", ProcedureSpec::CompleteRandomization),
                NamedProcedure::new("STR-PB", ProcedureSpec::StratifiedBlocks(sizes)),
            ],
            n: 40,
            replicates: 1,
            seed: 3,
            metrics: vec![Metric::new(Scope::UnobsMargin { covariate: 0, level: 2 }, 0)],
            threads: Some(1),
        };
        let summary = run_study(&config).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.rows[0].sd.is_none());
        assert_eq!(summary.rows[0].theory_ref.as_deref(), Some("tau_cr"));
        assert_eq!(summary.rows[1].theory_ref.as_deref(), Some("strpb_large_n"));
        config.replicates = 0;
        assert!(run_study(&config).is_err());
        config.replicates = 2;
        config.metrics[0].arm = 3;
        assert!(run_study(&config).is_err());
    }

    #[test]
    fn gamma_needs_a_grid() {
        let ratios = AllocationRatios::equal(2).unwrap();
        let config = GammaConfig {
            scenario: scenario(),
            ratios,
            procedure: ProcedureSpec::CompleteRandomization,
            stratum: StratumId(0),
            arm: 0,
            n_grid: vec![100],
            replicates: 10,
            seed: 1,
            threads: None,
        };
        assert!(estimate_gamma(&config).is_err());
    }
}
