//! Population models (explicit tables, thresholded Gaussian noise, empirical cohorts), cohort
//! CSV ingestion, and scenarios that split a model's columns into observed and unobserved blocks.

mod cohort;
mod model;
mod normal;
pub mod synthetic;

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;

pub use cohort::{empirical_joint, load_cohort, load_cohort_from_reader, ArrivalPolicy, EmpiricalCohort, RecodeMap};
pub use model::{
    delta_cells, delta_model, threshold_model, ModelSampler, PopulationModel, TabularJoint, ThresholdNoise,
    DEFAULT_SIGMA2, THRESHOLD_OBSERVED, U1_THRESHOLD, U2_INPUTS, U2_THRESHOLD,
};
pub use normal::normal_cdf;

use crate::error::{Error, Result};
use crate::schema::{Covariate, CovariateSchema, Level, PatientProfile};
use crate::theory::JointPmf;

/// A population model together with the observed/unobserved split used by a study.
#[derive(Debug, Clone)]
pub struct Scenario {
    model: Arc<PopulationModel>,
    schema: Arc<CovariateSchema>,
    observed: Vec<usize>,
    unobserved: Vec<usize>,
    width: usize,
}

impl Scenario {
    /// Selects columns by name; names must be distinct and the observed block non-empty.
    pub fn new<S: AsRef<str>>(model: Arc<PopulationModel>, observed: &[S], unobserved: &[S]) -> Result<Self> {
        let columns = model.columns();
        let mut seen = HashSet::new();
        let mut locate = |name: &str| -> Result<usize> {
            if !seen.insert(name.to_string()) {
                return Err(Error::Schema(format!("covariate {name:?} selected twice")));
            }
            columns
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| Error::Schema(format!("unknown covariate {name:?}")))
        };
        let obs: Vec<usize> = observed.iter().map(|n| locate(n.as_ref())).collect::<Result<_>>()?;
        let unobs: Vec<usize> = unobserved.iter().map(|n| locate(n.as_ref())).collect::<Result<_>>()?;
        let pick = |idx: &[usize]| -> Vec<Covariate> { idx.iter().map(|&i| columns[i].clone()).collect() };
        let schema = Arc::new(CovariateSchema::new(pick(&obs), pick(&unobs))?);
        Ok(Self {
            model,
            schema,
            observed: obs,
            unobserved: unobs,
            width: columns.len(),
        })
    }

    /// The model's own split.
    pub fn with_default_split(model: Arc<PopulationModel>) -> Result<Self> {
        let (obs, unobs) = model.default_split();
        Self::new(model, &obs, &unobs)
    }

    pub fn model(&self) -> &Arc<PopulationModel> {
        &self.model
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    /// Exact (or empirical, for cohorts) joint over this split.
    pub fn joint(&self) -> Result<JointPmf> {
        let names = |b: &[Covariate]| b.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
        self.model
            .joint(&names(self.schema.observed()), &names(self.schema.unobserved()))
    }

    /// A fresh per-replicate patient stream.
    pub fn sampler(&self) -> ScenarioSampler<'_> {
        ScenarioSampler {
            scenario: self,
            inner: self.model.sampler(),
            buf: vec![0; self.width],
        }
    }
}

/// Draws patients from a scenario and projects them onto its split.
#[derive(Debug, Clone)]
pub struct ScenarioSampler<'a> {
    scenario: &'a Scenario,
    inner: ModelSampler<'a>,
    buf: Vec<Level>,
}

impl ScenarioSampler<'_> {
    pub fn next_profile<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PatientProfile> {
        self.inner.next_into(rng, &mut self.buf)?;
        let s = self.scenario;
        let obs = s.observed.iter().map(|&i| self.buf[i]).collect();
        let unobs = s.unobserved.iter().map(|&i| self.buf[i]).collect();
        s.schema.profile(obs, unobs)
    }
}
