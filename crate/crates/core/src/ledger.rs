//! Exact running imbalances `D_{n,g}(A) = N_g(A) − ρ_g·N(A)` for every scope `A`.
//!
//! Two ledgers share one counting core. [`ObservedLedger`] is fed blinded profiles and only
//! tracks observed scopes; it is what covariate-adaptive procedures consult.
//! [`AllocationLedger`] is the auditor: it is fed full profiles and tracks every scope,
//! including the unobserved and joint ones.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ratio::{AllocationRatios, Rational};
use crate::schema::{Block, BlindedProfile, CovariateSchema, Level, PatientProfile, StratumId};

/// An event `A` over which imbalance is measured.
///
/// Covariate indices are 0-based positions inside their block; levels are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Overall,
    ObsMargin { covariate: usize, level: Level },
    ObsStratum(StratumId),
    UnobsMargin { covariate: usize, level: Level },
    UnobsStratum(StratumId),
    JointStratumMargin { stratum: StratumId, covariate: usize, level: Level },
    JointStratumStratum { stratum: StratumId, unobserved: StratumId },
}

impl Scope {
    pub fn involves_unobserved(&self) -> bool {
        !matches!(self, Scope::Overall | Scope::ObsMargin { .. } | Scope::ObsStratum(_))
    }

    pub fn validate(&self, schema: &CovariateSchema) -> Result<()> {
        let margin = |block: Block, covariate: usize, level: Level| -> Result<()> {
            let covs = schema.covariates(block);
            let cov = covs.get(covariate).ok_or_else(|| {
                Error::Scope(format!("{block:?} covariate index {covariate} out of range"))
            })?;
            if level == 0 || level > cov.levels {
                return Err(Error::Scope(format!(
                    "level {level} out of range 1..={} for {:?}",
                    cov.levels, cov.name
                )));
            }
            Ok(())
        };
        let stratum = |block: Block, id: StratumId| -> Result<()> {
            if id.index() >= schema.strata(block) {
                return Err(Error::Scope(format!("{block:?} stratum {} out of range", id.0)));
            }
            Ok(())
        };
        match *self {
            Scope::Overall => Ok(()),
            Scope::ObsMargin { covariate, level } => margin(Block::Observed, covariate, level),
            Scope::ObsStratum(s) => stratum(Block::Observed, s),
            Scope::UnobsMargin { covariate, level } => margin(Block::Unobserved, covariate, level),
            Scope::UnobsStratum(r) => stratum(Block::Unobserved, r),
            Scope::JointStratumMargin { stratum: s, covariate, level } => {
                stratum(Block::Observed, s)?;
                margin(Block::Unobserved, covariate, level)
            }
            Scope::JointStratumStratum { stratum: s, unobserved } => {
                stratum(Block::Observed, s)?;
                stratum(Block::Unobserved, unobserved)
            }
        }
    }

    /// `I(A)` for one patient.
    pub fn contains(&self, profile: &PatientProfile) -> bool {
        match *self {
            Scope::Overall => true,
            Scope::ObsMargin { covariate, level } => profile.observed_levels()[covariate] == level,
            Scope::ObsStratum(s) => profile.observed_stratum() == s,
            Scope::UnobsMargin { covariate, level } => profile.unobserved_levels()[covariate] == level,
            Scope::UnobsStratum(r) => profile.unobserved_stratum() == r,
            Scope::JointStratumMargin { stratum, covariate, level } => {
                profile.observed_stratum() == stratum && profile.unobserved_levels()[covariate] == level
            }
            Scope::JointStratumStratum { stratum, unobserved } => {
                profile.observed_stratum() == stratum && profile.unobserved_stratum() == unobserved
            }
        }
    }

    /// Human-readable id such as `s=(1,1);U1=1` or `r=(2,1)`.
    pub fn label(&self, schema: &CovariateSchema) -> String {
        let strat = |block: Block, id: StratumId| {
            let levels = schema.stratum_levels(block, id).unwrap_or_default();
            let mut out = String::from("(");
            for (i, l) in levels.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{l}");
            }
            out.push(')');
            out
        };
        let name = |block: Block, k: usize| {
            schema
                .covariates(block)
                .get(k)
                .map(|c| c.name.clone())
                .unwrap_or_else(|| format!("?{k}"))
        };
        match *self {
            Scope::Overall => "overall".into(),
            Scope::ObsMargin { covariate, level } => format!("{}={level}", name(Block::Observed, covariate)),
            Scope::ObsStratum(s) => format!("s={}", strat(Block::Observed, s)),
            Scope::UnobsMargin { covariate, level } => {
                format!("{}={level}", name(Block::Unobserved, covariate))
            }
            Scope::UnobsStratum(r) => format!("r={}", strat(Block::Unobserved, r)),
            Scope::JointStratumMargin { stratum, covariate, level } => format!(
                "s={};{}={level}",
                strat(Block::Observed, stratum),
                name(Block::Unobserved, covariate)
            ),
            Scope::JointStratumStratum { stratum, unobserved } => format!(
                "s={};r={}",
                strat(Block::Observed, stratum),
                strat(Block::Unobserved, unobserved)
            ),
        }
    }
}

/// Stratum-keyed tables at or below this many rows are stored densely.
const DENSE_ROW_LIMIT: usize = 1 << 16;

/// Rows of `[N(A), N_1(A), …, N_m(A)]`, either dense or materialized on first touch.
#[derive(Debug, Clone)]
enum CountTable {
    Dense(Vec<u32>),
    Sparse { index: HashMap<u64, usize>, data: Vec<u32> },
}

impl CountTable {
    fn new(rows: usize, arms: usize) -> Self {
        if rows <= DENSE_ROW_LIMIT {
            CountTable::Dense(vec![0; rows * (arms + 1)])
        } else {
            CountTable::Sparse {
                index: HashMap::new(),
                data: Vec::new(),
            }
        }
    }

    #[inline]
    fn add(&mut self, key: u64, arm: usize, width: usize) {
        let base = match self {
            CountTable::Dense(_) => key as usize * width,
            CountTable::Sparse { index, data } => *index.entry(key).or_insert_with(|| {
                let at = data.len();
                data.resize(at + width, 0);
                at
            }),
        };
        let data = match self {
            CountTable::Dense(d) => d,
            CountTable::Sparse { data, .. } => data,
        };
        data[base] += 1;
        data[base + 1 + arm] += 1;
    }

    #[inline]
    fn row(&self, key: u64, width: usize) -> Option<&[u32]> {
        match self {
            CountTable::Dense(d) => {
                let base = key as usize * width;
                d.get(base..base + width)
            }
            CountTable::Sparse { index, data } => index.get(&key).map(|&b| &data[b..b + width]),
        }
    }
}

#[derive(Debug, Clone)]
struct Tallies {
    schema: Arc<CovariateSchema>,
    ratios: AllocationRatios,
    width: usize,
    n: u64,
    overall: Vec<u32>,
    obs_margin_offsets: Vec<usize>,
    obs_margins: Vec<u32>,
    obs_strata: CountTable,
    unobserved: Option<UnobservedTallies>,
}

#[derive(Debug, Clone)]
struct UnobservedTallies {
    margin_offsets: Vec<usize>,
    margin_total: usize,
    margins: Vec<u32>,
    strata: CountTable,
    joint_margin: CountTable,
    joint_stratum: CountTable,
}

fn offsets(schema: &CovariateSchema, block: Block) -> (Vec<usize>, usize) {
    let mut acc = 0;
    let offs = schema
        .covariates(block)
        .iter()
        .map(|c| {
            let at = acc;
            acc += c.levels as usize;
            at
        })
        .collect();
    (offs, acc)
}

impl Tallies {
    fn new(schema: Arc<CovariateSchema>, ratios: AllocationRatios, with_unobserved: bool) -> Self {
        let arms = ratios.arms();
        let width = arms + 1;
        let (obs_margin_offsets, obs_total) = offsets(&schema, Block::Observed);
        let unobserved = with_unobserved.then(|| {
            let (margin_offsets, margin_total) = offsets(&schema, Block::Unobserved);
            let l_obs = schema.observed_strata();
            let l_unobs = schema.unobserved_strata();
            UnobservedTallies {
                margin_offsets,
                margin_total,
                margins: vec![0; margin_total * width],
                strata: CountTable::new(l_unobs, arms),
                joint_margin: CountTable::new(l_obs.saturating_mul(margin_total), arms),
                joint_stratum: CountTable::new(l_obs.saturating_mul(l_unobs), arms),
            }
        });
        Self {
            obs_strata: CountTable::new(schema.observed_strata(), arms),
            schema,
            ratios,
            width,
            n: 0,
            overall: vec![0; width],
            obs_margin_offsets,
            obs_margins: vec![0; obs_total * width],
            unobserved,
        }
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.ratios.arms() {
            return Err(Error::ArmOutOfRange {
                arm,
                arms: self.ratios.arms(),
            });
        }
        Ok(())
    }

    fn record_observed(&mut self, levels: &[Level], stratum: StratumId, arm: usize) {
        let w = self.width;
        self.n += 1;
        self.overall[0] += 1;
        self.overall[1 + arm] += 1;
        for (k, &level) in levels.iter().enumerate() {
            let base = (self.obs_margin_offsets[k] + level as usize - 1) * w;
            self.obs_margins[base] += 1;
            self.obs_margins[base + 1 + arm] += 1;
        }
        self.obs_strata.add(stratum.0 as u64, arm, w);
    }

    fn record_unobserved(&mut self, profile: &PatientProfile, arm: usize) {
        let w = self.width;
        let l_unobs = self.schema.unobserved_strata() as u64;
        let Some(u) = self.unobserved.as_mut() else { return };
        let s = profile.observed_stratum().0 as u64;
        let r = profile.unobserved_stratum().0 as u64;
        for (j, &level) in profile.unobserved_levels().iter().enumerate() {
            let m = u.margin_offsets[j] + level as usize - 1;
            let base = m * w;
            u.margins[base] += 1;
            u.margins[base + 1 + arm] += 1;
            u.joint_margin.add(s * u.margin_total as u64 + m as u64, arm, w);
        }
        u.strata.add(r, arm, w);
        u.joint_stratum.add(s * l_unobs + r, arm, w);
    }

    fn row(&self, scope: &Scope) -> Option<&[u32]> {
        let w = self.width;
        fn dense(data: &[u32], idx: usize, w: usize) -> Option<&[u32]> {
            data.get(idx * w..idx * w + w)
        }
        match *scope {
            Scope::Overall => Some(&self.overall),
            Scope::ObsMargin { covariate, level } => {
                let off = *self.obs_margin_offsets.get(covariate)?;
                dense(&self.obs_margins, off + level as usize - 1, w)
            }
            Scope::ObsStratum(s) => self.obs_strata.row(s.0 as u64, w),
            _ => {
                let u = self.unobserved.as_ref()?;
                let l_unobs = self.schema.unobserved_strata() as u64;
                match *scope {
                    Scope::UnobsMargin { covariate, level } => {
                        let off = *u.margin_offsets.get(covariate)?;
                        dense(&u.margins, off + level as usize - 1, w)
                    }
                    Scope::UnobsStratum(r) => u.strata.row(r.0 as u64, w),
                    Scope::JointStratumMargin { stratum, covariate, level } => {
                        let m = *u.margin_offsets.get(covariate)? + level as usize - 1;
                        u.joint_margin.row(stratum.0 as u64 * u.margin_total as u64 + m as u64, w)
                    }
                    Scope::JointStratumStratum { stratum, unobserved } => u
                        .joint_stratum
                        .row(stratum.0 as u64 * l_unobs + unobserved.0 as u64, w),
                    _ => None,
                }
            }
        }
    }

    fn scope_total(&self, scope: &Scope) -> u64 {
        self.row(scope).map_or(0, |r| r[0] as u64)
    }

    fn arm_count(&self, scope: &Scope, arm: usize) -> u64 {
        self.row(scope).map_or(0, |r| r[1 + arm] as u64)
    }

    /// `Q·D_{n,g}(A)` as an exact integer.
    fn scaled_imbalance(&self, scope: &Scope, arm: usize) -> i64 {
        match self.row(scope) {
            Some(r) => {
                self.ratios.common_denominator() * r[1 + arm] as i64
                    - self.ratios.scaled_numerators()[arm] * r[0] as i64
            }
            None => 0,
        }
    }

    fn imbalance(&self, scope: &Scope, arm: usize) -> Rational {
        Rational::new(self.scaled_imbalance(scope, arm), self.ratios.common_denominator())
    }

    fn imbalance_f64(&self, scope: &Scope, arm: usize) -> f64 {
        self.scaled_imbalance(scope, arm) as f64 / self.ratios.common_denominator() as f64
    }
}

macro_rules! ledger_reads {
    () => {
        pub fn schema(&self) -> &Arc<CovariateSchema> {
            &self.inner.schema
        }

        pub fn ratios(&self) -> &AllocationRatios {
            &self.inner.ratios
        }

        pub fn arms(&self) -> usize {
            self.inner.ratios.arms()
        }

        /// Number of patients recorded so far.
        pub fn n(&self) -> u64 {
            self.inner.n
        }

        /// `N(A)`.
        pub fn scope_count(&self, scope: &Scope) -> u64 {
            self.inner.scope_total(scope)
        }

        /// `N_g(A)`.
        pub fn arm_count(&self, scope: &Scope, arm: usize) -> u64 {
            self.inner.arm_count(scope, arm)
        }

        /// `D_{n,g}(A)` exactly; a scope with no patients yet is 0.
        pub fn imbalance(&self, scope: &Scope, arm: usize) -> Rational {
            self.inner.imbalance(scope, arm)
        }

        /// `Q·D_{n,g}(A)` where `Q` is the ratios' common denominator.
        pub fn scaled_imbalance(&self, scope: &Scope, arm: usize) -> i64 {
            self.inner.scaled_imbalance(scope, arm)
        }

        pub fn imbalance_f64(&self, scope: &Scope, arm: usize) -> f64 {
            self.inner.imbalance_f64(scope, arm)
        }
    };
}

/// Procedure-facing ledger over observed scopes only (overall, margins, strata).
#[derive(Debug, Clone)]
pub struct ObservedLedger {
    inner: Tallies,
}

impl ObservedLedger {
    pub fn new(schema: Arc<CovariateSchema>, ratios: AllocationRatios) -> Self {
        Self {
            inner: Tallies::new(schema, ratios, false),
        }
    }

    pub fn record(&mut self, profile: &BlindedProfile<'_>, arm: usize) -> Result<()> {
        self.inner.check_arm(arm)?;
        self.inner.record_observed(profile.levels(), profile.stratum(), arm);
        Ok(())
    }

    ledger_reads!();
}

/// Auditor ledger over every scope, fed full profiles.
#[derive(Debug, Clone)]
pub struct AllocationLedger {
    inner: Tallies,
}

impl AllocationLedger {
    pub fn new(schema: Arc<CovariateSchema>, ratios: AllocationRatios) -> Self {
        Self {
            inner: Tallies::new(schema, ratios, true),
        }
    }

    pub fn record_assignment(&mut self, profile: &PatientProfile, arm: usize) -> Result<()> {
        self.inner.check_arm(arm)?;
        self.inner
            .record_observed(profile.observed_levels(), profile.observed_stratum(), arm);
        self.inner.record_unobserved(profile, arm);
        Ok(())
    }

    ledger_reads!();
}

/// Free-function form of [`AllocationLedger::imbalance`].
pub fn imbalance(ledger: &AllocationLedger, scope: &Scope, arm: usize) -> Rational {
    ledger.imbalance(scope, arm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::rational;
    use crate::schema::build_schema;
    use num_traits::Zero;

    fn setup() -> (Arc<CovariateSchema>, AllocationRatios) {
        let schema = Arc::new(build_schema(&[("X1", 2), ("X2", 2)], &[("U1", 2), ("U2", 2)]).unwrap());
        let ratios = AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap();
        (schema, ratios)
    }

    #[test]
    fn single_assignment_imbalances() {
        let (schema, ratios) = setup();
        let mut ledger = AllocationLedger::new(schema.clone(), ratios);
        let p = schema.profile(vec![1, 2], vec![2, 1]).unwrap();
        ledger.record_assignment(&p, 0).unwrap();
        assert_eq!(ledger.imbalance(&Scope::Overall, 0), rational(4, 5));
        assert_eq!(ledger.imbalance(&Scope::Overall, 1), rational(-3, 10));
        assert_eq!(ledger.imbalance(&Scope::Overall, 2), rational(-1, 2));
        let scopes = [
            Scope::Overall,
            Scope::ObsMargin { covariate: 1, level: 2 },
            Scope::ObsStratum(p.observed_stratum()),
            Scope::UnobsMargin { covariate: 0, level: 2 },
            Scope::UnobsStratum(p.unobserved_stratum()),
            Scope::JointStratumMargin { stratum: p.observed_stratum(), covariate: 1, level: 1 },
            Scope::JointStratumStratum { stratum: p.observed_stratum(), unobserved: p.unobserved_stratum() },
        ];
        for scope in scopes {
            let total: Rational = (0..3).map(|g| ledger.imbalance(&scope, g)).sum();
            assert!(total.is_zero(), "{scope:?}");
            assert_eq!(ledger.scope_count(&scope), 1);
        }
    }

    #[test]
    fn three_patients_same_stratum() {
        let (schema, ratios) = setup();
        let mut ledger = AllocationLedger::new(schema.clone(), ratios);
        let p = schema.profile(vec![2, 1], vec![1, 1]).unwrap();
        for arm in [0, 0, 1] {
            ledger.record_assignment(&p, arm).unwrap();
        }
        let s = Scope::ObsStratum(p.observed_stratum());
        assert_eq!(ledger.imbalance(&s, 0), rational(7, 5));
        assert_eq!(ledger.imbalance(&s, 1), rational(1, 10));
        assert_eq!(ledger.imbalance(&s, 2), rational(-3, 2));
    }

    #[test]
    fn empty_ledger_and_unseen_scopes_are_zero() {
        let (schema, ratios) = setup();
        let ledger = AllocationLedger::new(schema, ratios);
        assert!(ledger.imbalance(&Scope::UnobsStratum(StratumId(3)), 2).is_zero());
        assert!(ledger.imbalance(&Scope::Overall, 0).is_zero());
        assert_eq!(ledger.n(), 0);
    }

    #[test]
    fn arm_out_of_range() {
        let (schema, ratios) = setup();
        let mut ledger = AllocationLedger::new(schema.clone(), ratios);
        let p = schema.profile(vec![1, 1], vec![1, 1]).unwrap();
        assert!(matches!(
            ledger.record_assignment(&p, 3),
            Err(Error::ArmOutOfRange { arm: 3, arms: 3 })
        ));
        assert_eq!(ledger.n(), 0);
    }

    #[test]
    fn observed_ledger_ignores_unobserved_scopes() {
        let (schema, ratios) = setup();
        let mut ledger = ObservedLedger::new(schema.clone(), ratios);
        let p = schema.profile(vec![1, 1], vec![2, 2]).unwrap();
        ledger.record(&p.blinded(), 2).unwrap();
        assert_eq!(ledger.imbalance(&Scope::ObsStratum(StratumId(0)), 2), rational(1, 2));
        assert!(ledger
            .imbalance(&Scope::UnobsMargin { covariate: 0, level: 2 }, 2)
            .is_zero());
    }

    #[test]
    fn sparse_tables_match_dense() {
        let mut sparse = CountTable::Sparse {
            index: HashMap::new(),
            data: Vec::new(),
        };
        let mut dense = CountTable::new(100, 2);
        for (key, arm) in [(5u64, 0usize), (99, 1), (5, 1), (0, 0)] {
            sparse.add(key, arm, 3);
            dense.add(key, arm, 3);
        }
        for key in 0..100 {
            let d = dense.row(key, 3).unwrap();
            match sparse.row(key, 3) {
                Some(s) => assert_eq!(s, d),
                None => assert_eq!(d, &[0, 0, 0]),
            }
        }
    }

    #[test]
    fn scope_validation_and_labels() {
        let (schema, _) = setup();
        assert!(Scope::ObsMargin { covariate: 2, level: 1 }.validate(&schema).is_err());
        assert!(Scope::UnobsMargin { covariate: 0, level: 3 }.validate(&schema).is_err());
        assert!(Scope::ObsStratum(StratumId(4)).validate(&schema).is_err());
        let scope = Scope::JointStratumMargin { stratum: StratumId(0), covariate: 0, level: 1 };
        assert!(scope.validate(&schema).is_ok());
        assert_eq!(scope.label(&schema), "s=(1,1);U1=1");
        assert_eq!(Scope::UnobsStratum(StratumId(2)).label(&schema), "r=(2,1)");
    }
}
