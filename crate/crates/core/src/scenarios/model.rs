use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ratio::{to_f64, Rational};
use crate::schema::{Covariate, CovariateSchema, Level};
use crate::theory::JointPmf;

use super::cohort::{ArrivalPolicy, EmpiricalCohort};
use super::normal::normal_cdf;

/// Number of fair-coin observed covariates in the threshold model.
pub const THRESHOLD_OBSERVED: usize = 10;
/// `U₁ = 1{ΣX + ε₁ > 6}`.
pub const U1_THRESHOLD: f64 = 6.0;
/// `U₂ = 1{X₁ + X₂ + X₃ + ε₂ > 2}`.
pub const U2_THRESHOLD: f64 = 2.0;
/// Number of leading observed covariates feeding `U₂`.
pub const U2_INPUTS: usize = 3;
/// Noise scale of `U₂` when none is given.
pub const DEFAULT_SIGMA2: f64 = 1.0;

/// An explicit joint table with an inverse-CDF sampler.
#[derive(Debug, Clone)]
pub struct TabularJoint {
    pmf: JointPmf,
    cdf: Vec<f64>,
}

impl TabularJoint {
    pub fn new(pmf: JointPmf) -> Self {
        let mut acc = 0.0;
        let cdf = pmf
            .table()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { pmf, cdf }
    }

    pub fn pmf(&self) -> &JointPmf {
        &self.pmf
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Level]) {
        let u: f64 = rng.random();
        let mut cell = self.cdf.partition_point(|&c| c <= u);
        if cell >= self.cdf.len() {
            cell = self.pmf.table().iter().rposition(|&p| p > 0.0).unwrap_or(0);
        }
        let schema = self.pmf.schema();
        let l_unobs = schema.unobserved_strata();
        let k = schema.observed().len();
        decode(schema.observed(), cell / l_unobs, &mut out[..k]);
        decode(schema.unobserved(), cell % l_unobs, &mut out[k..]);
    }
}

/// Mixed-radix decoding, first covariate most significant.
fn decode(covariates: &[Covariate], mut id: usize, out: &mut [Level]) {
    for (slot, cov) in out.iter_mut().zip(covariates).rev() {
        let l = cov.levels as usize;
        *slot = (id % l) as Level + 1;
        id /= l;
    }
}

/// Ten fair-coin observed covariates and two thresholded noisy sums as unobserved covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdNoise {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl ThresholdNoise {
    pub fn new(sigma1: f64, sigma2: f64) -> Result<Self> {
        for (name, s) in [("sigma1", sigma1), ("sigma2", sigma2)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Model(format!("{name} must be positive and finite, got {s}")));
            }
        }
        Ok(Self { sigma1, sigma2 })
    }

    /// `P(U₁ = 1 | ΣX = total)`.
    pub fn p_u1(&self, total: u32) -> Result<f64> {
        normal_cdf((total as f64 - U1_THRESHOLD) / self.sigma1)
    }

    /// `P(U₂ = 1 | X₁ + X₂ + X₃ = partial)`.
    pub fn p_u2(&self, partial: u32) -> Result<f64> {
        normal_cdf((partial as f64 - U2_THRESHOLD) / self.sigma2)
    }

    fn columns() -> Vec<Covariate> {
        let mut cols: Vec<Covariate> = (1..=THRESHOLD_OBSERVED).map(|i| Covariate::new(format!("X{i}"), 2)).collect();
        cols.push(Covariate::new("U1", 2));
        cols.push(Covariate::new("U2", 2));
        cols
    }

    /// Exact joint over the 2¹⁰ observed strata and the four `(U₁, U₂)` cells.
    pub fn joint(&self) -> Result<JointPmf> {
        let cols = Self::columns();
        let schema = Arc::new(CovariateSchema::new(
            cols[..THRESHOLD_OBSERVED].to_vec(),
            cols[THRESHOLD_OBSERVED..].to_vec(),
        )?);
        let mut u1 = Vec::with_capacity(THRESHOLD_OBSERVED + 1);
        for k in 0..=THRESHOLD_OBSERVED as u32 {
            u1.push(self.p_u1(k)?);
        }
        let mut u2 = Vec::with_capacity(U2_INPUTS + 1);
        for k in 0..=U2_INPUTS as u32 {
            u2.push(self.p_u2(k)?);
        }
        let p_x = 0.5f64.powi(THRESHOLD_OBSERVED as i32);
        JointPmf::from_fn(schema, |x, u| {
            let ones = |levels: &[Level]| levels.iter().filter(|&&l| l == 2).count();
            let a = u1[ones(x)];
            let b = u2[ones(&x[..U2_INPUTS])];
            let pa = if u[0] == 2 { a } else { 1.0 - a };
            let pb = if u[1] == 2 { b } else { 1.0 - b };
            p_x * pa * pb
        })
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Level]) {
        let bits = rng.next_u32();
        let mut total = 0;
        let mut partial = 0;
        for (i, slot) in out[..THRESHOLD_OBSERVED].iter_mut().enumerate() {
            let x = (bits >> i) & 1;
            *slot = x as Level + 1;
            total += x;
            if i < U2_INPUTS {
                partial += x;
            }
        }
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        out[THRESHOLD_OBSERVED] = if total as f64 + self.sigma1 * e1 > U1_THRESHOLD { 2 } else { 1 };
        out[THRESHOLD_OBSERVED + 1] = if partial as f64 + self.sigma2 * e2 > U2_THRESHOLD { 2 } else { 1 };
    }
}

/// Source of patient covariates.
#[derive(Debug, Clone)]
pub enum PopulationModel {
    TabularJoint(TabularJoint),
    ThresholdNoise(ThresholdNoise),
    EmpiricalCohort(EmpiricalCohort),
}

impl PopulationModel {
    /// Every column the model produces, in sampling order.
    pub fn columns(&self) -> Vec<Covariate> {
        match self {
            PopulationModel::TabularJoint(t) => {
                let s = t.pmf.schema();
                s.observed().iter().chain(s.unobserved()).cloned().collect()
            }
            PopulationModel::ThresholdNoise(_) => ThresholdNoise::columns(),
            PopulationModel::EmpiricalCohort(c) => c.columns().to_vec(),
        }
    }

    /// The model's own observed/unobserved split.
    pub fn default_split(&self) -> (Vec<String>, Vec<String>) {
        let cols = self.columns();
        let k = match self {
            PopulationModel::TabularJoint(t) => t.pmf.schema().observed().len(),
            PopulationModel::ThresholdNoise(_) => THRESHOLD_OBSERVED,
            PopulationModel::EmpiricalCohort(c) => c.columns().len(),
        };
        let names = |cs: &[Covariate]| cs.iter().map(|c| c.name.clone()).collect();
        (names(&cols[..k]), names(&cols[k..]))
    }

    /// Exact joint for the given split.
    pub fn joint<S: AsRef<str>>(&self, observed: &[S], unobserved: &[S]) -> Result<JointPmf> {
        match self {
            PopulationModel::TabularJoint(t) => t.pmf.project(observed, unobserved),
            PopulationModel::ThresholdNoise(m) => m.joint()?.project(observed, unobserved),
            PopulationModel::EmpiricalCohort(c) => super::cohort::empirical_joint(c, observed, unobserved),
        }
    }

    /// A fresh per-replicate stream of patients.
    pub fn sampler(&self) -> ModelSampler<'_> {
        let order = match self {
            PopulationModel::EmpiricalCohort(c) if c.arrival() == ArrivalPolicy::Permutation => {
                (0..c.len() as u32).collect()
            }
            _ => Vec::new(),
        };
        ModelSampler {
            model: self,
            order,
            drawn: 0,
        }
    }
}

/// Per-replicate sampling state; for cohorts under permutation arrival it walks a lazily
/// shuffled order so no patient is drawn twice.
#[derive(Debug, Clone)]
pub struct ModelSampler<'a> {
    model: &'a PopulationModel,
    order: Vec<u32>,
    drawn: usize,
}

impl ModelSampler<'_> {
    pub fn model(&self) -> &PopulationModel {
        self.model
    }

    /// Writes the next patient's levels, one per column of [`PopulationModel::columns`].
    pub fn next_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [Level]) -> Result<()> {
        match self.model {
            PopulationModel::TabularJoint(t) => t.sample_into(rng, out),
            PopulationModel::ThresholdNoise(m) => m.sample_into(rng, out),
            PopulationModel::EmpiricalCohort(c) => {
                let row = match c.arrival() {
                    ArrivalPolicy::Bootstrap => rng.random_range(0..c.len()),
                    ArrivalPolicy::Permutation => {
                        let i = self.drawn;
                        if i >= self.order.len() {
                            return Err(Error::CohortExhausted {
                                requested: i + 1,
                                size: c.len(),
                            });
                        }
                        let j = rng.random_range(i..self.order.len());
                        self.order.swap(i, j);
                        self.order[i] as usize
                    }
                };
                out.copy_from_slice(c.row(row));
            }
        }
        self.drawn += 1;
        Ok(())
    }

    /// Next patient as a freshly allocated level vector.
    pub fn next_levels<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<Level>> {
        let mut out = vec![0; self.model.columns().len()];
        self.next_into(rng, &mut out)?;
        Ok(out)
    }
}

/// Exact cell masses of the four-covariate correlation model: cells with `(U₁, U₂) = (X₁, X₂)`
/// get `1/16 + Δ`, the other twelve `1/16 − Δ/3`. Cells are ordered `(X₁, X₂, U₁, U₂)`
/// with `X₁` most significant.
pub fn delta_cells(delta: Rational) -> Result<Vec<Rational>> {
    let zero = Rational::from_integer(0);
    if delta < zero || delta > Rational::new(3, 16) {
        return Err(Error::Model(format!(
            "delta {delta} outside [0, 3/16] would give negative cell mass"
        )));
    }
    let base = Rational::new(1, 16);
    Ok((0..16)
        .map(|cell| {
            let (x, u) = (cell >> 2, cell & 3);
            if x == u {
                base + delta
            } else {
                base - delta / 3
            }
        })
        .collect())
}

/// Two binary observed and two binary unobserved covariates whose agreement is tuned by `Δ`.
pub fn delta_model(delta: Rational) -> Result<PopulationModel> {
    let cells = delta_cells(delta)?;
    let schema = Arc::new(crate::schema::build_schema(&[("X1", 2), ("X2", 2)], &[("U1", 2), ("U2", 2)])?);
    let pmf = JointPmf::new(schema, cells.into_iter().map(to_f64).collect())?;
    Ok(PopulationModel::TabularJoint(TabularJoint::new(pmf)))
}

/// Threshold model with noise scales `σ₁`, `σ₂`.
pub fn threshold_model(sigma1: f64, sigma2: f64) -> Result<PopulationModel> {
    Ok(PopulationModel::ThresholdNoise(ThresholdNoise::new(sigma1, sigma2)?))
}
