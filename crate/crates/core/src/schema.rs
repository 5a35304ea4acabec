//! Categorical covariate schemas and patient profiles.
//!
//! Levels are 1-based throughout: a covariate with `l` levels takes values `1..=l`.
//! Strata are identified by a mixed-radix index with the first covariate most significant.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 1-based covariate level.
pub type Level = u16;

/// Mixed-radix index of a full combination of levels within one covariate block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumId(pub u32);

impl StratumId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub levels: Level,
}

impl Covariate {
    pub fn new(name: impl Into<String>, levels: Level) -> Self {
        Self {
            name: name.into(),
            levels,
        }
    }
}

/// Which block a covariate lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Observed,
    Unobserved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateSchema {
    observed: Vec<Covariate>,
    unobserved: Vec<Covariate>,
    observed_strata: usize,
    unobserved_strata: usize,
}

/// Largest stratum count a block may have; stratum ids are `u32`.
const MAX_STRATA: usize = 1 << 31;

impl CovariateSchema {
    pub fn new(observed: Vec<Covariate>, unobserved: Vec<Covariate>) -> Result<Self> {
        if observed.is_empty() {
            return Err(Error::Schema("at least one observed covariate is required".into()));
        }
        let mut names = HashSet::new();
        for cov in observed.iter().chain(&unobserved) {
            if cov.levels < 2 {
                return Err(Error::Schema(format!(
                    "covariate {:?} has {} level(s); at least 2 are required",
                    cov.name, cov.levels
                )));
            }
            if !names.insert(cov.name.as_str()) {
                return Err(Error::Schema(format!("duplicate covariate name {:?}", cov.name)));
            }
        }
        let observed_strata = block_size(&observed)?;
        let unobserved_strata = block_size(&unobserved)?;
        Ok(Self {
            observed,
            unobserved,
            observed_strata,
            unobserved_strata,
        })
    }

    pub fn observed(&self) -> &[Covariate] {
        &self.observed
    }

    pub fn unobserved(&self) -> &[Covariate] {
        &self.unobserved
    }

    pub fn covariates(&self, block: Block) -> &[Covariate] {
        match block {
            Block::Observed => &self.observed,
            Block::Unobserved => &self.unobserved,
        }
    }

    /// `L_obs = Π l_k`.
    pub fn observed_strata(&self) -> usize {
        self.observed_strata
    }

    /// `L_unobs = Π h_j`; 1 when there are no unobserved covariates.
    pub fn unobserved_strata(&self) -> usize {
        self.unobserved_strata
    }

    pub fn strata(&self, block: Block) -> usize {
        match block {
            Block::Observed => self.observed_strata,
            Block::Unobserved => self.unobserved_strata,
        }
    }

    /// Finds a covariate by name in either block.
    pub fn find(&self, name: &str) -> Option<(Block, usize)> {
        if let Some(k) = self.observed.iter().position(|c| c.name == name) {
            return Some((Block::Observed, k));
        }
        self.unobserved
            .iter()
            .position(|c| c.name == name)
            .map(|j| (Block::Unobserved, j))
    }

    pub fn stratum_of(&self, block: Block, levels: &[Level]) -> Result<StratumId> {
        let covs = self.covariates(block);
        check_levels(covs, levels)?;
        Ok(encode(covs, levels))
    }

    pub fn stratum_levels(&self, block: Block, id: StratumId) -> Result<Vec<Level>> {
        if id.index() >= self.strata(block) {
            return Err(Error::Scope(format!(
                "stratum {} out of range ({} strata)",
                id.0,
                self.strata(block)
            )));
        }
        Ok(decode(self.covariates(block), id))
    }

    pub fn profile(&self, observed: Vec<Level>, unobserved: Vec<Level>) -> Result<PatientProfile> {
        check_levels(&self.observed, &observed)?;
        check_levels(&self.unobserved, &unobserved)?;
        let observed_stratum = encode(&self.observed, &observed);
        let unobserved_stratum = encode(&self.unobserved, &unobserved);
        Ok(PatientProfile {
            observed,
            unobserved,
            observed_stratum,
            unobserved_stratum,
        })
    }
}

/// Convenience builder from `(name, level_count)` pairs.
pub fn build_schema(observed: &[(&str, Level)], unobserved: &[(&str, Level)]) -> Result<CovariateSchema> {
    let conv = |spec: &[(&str, Level)]| spec.iter().map(|(n, l)| Covariate::new(*n, *l)).collect();
    CovariateSchema::new(conv(observed), conv(unobserved))
}

fn block_size(covs: &[Covariate]) -> Result<usize> {
    covs.iter().try_fold(1usize, |acc, c| {
        acc.checked_mul(c.levels as usize)
            .filter(|v| *v <= MAX_STRATA)
            .ok_or_else(|| Error::Schema("too many strata in one covariate block".into()))
    })
}

fn check_levels(covs: &[Covariate], levels: &[Level]) -> Result<()> {
    if covs.len() != levels.len() {
        return Err(Error::Profile(format!(
            "expected {} levels, got {}",
            covs.len(),
            levels.len()
        )));
    }
    for (cov, &level) in covs.iter().zip(levels) {
        if level == 0 || level > cov.levels {
            return Err(Error::Profile(format!(
                "level {level} out of range 1..={} for {:?}",
                cov.levels, cov.name
            )));
        }
    }
    Ok(())
}

fn encode(covs: &[Covariate], levels: &[Level]) -> StratumId {
    let mut index = 0u32;
    for (cov, &level) in covs.iter().zip(levels) {
        index = index * cov.levels as u32 + (level as u32 - 1);
    }
    StratumId(index)
}

fn decode(covs: &[Covariate], id: StratumId) -> Vec<Level> {
    let mut rest = id.0;
    let mut levels = vec![0; covs.len()];
    for (k, cov) in covs.iter().enumerate().rev() {
        levels[k] = (rest % cov.levels as u32) as Level + 1;
        rest /= cov.levels as u32;
    }
    levels
}

/// One patient's full covariate vector `W = (X, U)`.
///
/// Fields are private; randomization procedures only ever receive [`BlindedProfile`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientProfile {
    observed: Vec<Level>,
    unobserved: Vec<Level>,
    observed_stratum: StratumId,
    unobserved_stratum: StratumId,
}

impl PatientProfile {
    pub fn observed_levels(&self) -> &[Level] {
        &self.observed
    }

    pub fn unobserved_levels(&self) -> &[Level] {
        &self.unobserved
    }

    pub fn observed_stratum(&self) -> StratumId {
        self.observed_stratum
    }

    pub fn unobserved_stratum(&self) -> StratumId {
        self.unobserved_stratum
    }

    /// The only view a randomization procedure may read.
    pub fn blinded(&self) -> BlindedProfile<'_> {
        BlindedProfile {
            levels: &self.observed,
            stratum: self.observed_stratum,
        }
    }
}

/// Observed covariates of one patient. Unobserved levels are not reachable from this type.
#[derive(Debug, Clone, Copy)]
pub struct BlindedProfile<'a> {
    levels: &'a [Level],
    stratum: StratumId,
}

impl<'a> BlindedProfile<'a> {
    pub fn levels(&self) -> &'a [Level] {
        self.levels
    }

    pub fn stratum(&self) -> StratumId {
        self.stratum
    }
}

impl fmt::Display for StratumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratum_counts() {
        let s = build_schema(&[("X1", 2), ("X2", 2)], &[("U1", 2), ("U2", 2)]).unwrap();
        assert_eq!((s.observed_strata(), s.unobserved_strata()), (4, 4));

        let s = build_schema(&[("X1", 2)], &[]).unwrap();
        assert_eq!((s.observed_strata(), s.unobserved_strata()), (2, 1));

        let names: Vec<String> = (1..=10).map(|i| format!("X{i}")).collect();
        let obs: Vec<(&str, Level)> = names.iter().map(|n| (n.as_str(), 2)).collect();
        let s = build_schema(&obs, &[("U1", 2), ("U2", 2)]).unwrap();
        assert_eq!(s.observed_strata(), 1024);
    }

    #[test]
    fn construction_errors() {
        assert!(build_schema(&[("X1", 2), ("X1", 3)], &[]).is_err());
        assert!(build_schema(&[("X1", 2)], &[("X1", 2)]).is_err());
        assert!(build_schema(&[("X1", 1)], &[]).is_err());
        assert!(build_schema(&[], &[("U1", 2)]).is_err());
    }

    #[test]
    fn strata_roundtrip() {
        let s = build_schema(&[("A", 2), ("B", 3), ("C", 4)], &[("U", 3)]).unwrap();
        for id in 0..s.observed_strata() as u32 {
            let levels = s.stratum_levels(Block::Observed, StratumId(id)).unwrap();
            assert_eq!(s.stratum_of(Block::Observed, &levels).unwrap(), StratumId(id));
        }
        assert_eq!(s.stratum_of(Block::Observed, &[1, 1, 1]).unwrap(), StratumId(0));
        assert_eq!(s.stratum_of(Block::Observed, &[2, 3, 4]).unwrap(), StratumId(23));
    }

    #[test]
    fn profile_validation() {
        let s = build_schema(&[("X1", 2)], &[("U1", 3)]).unwrap();
        assert!(s.profile(vec![2], vec![3]).is_ok());
        assert!(s.profile(vec![0], vec![1]).is_err());
        assert!(s.profile(vec![1], vec![4]).is_err());
        assert!(s.profile(vec![1, 1], vec![1]).is_err());
        let p = s.profile(vec![2], vec![3]).unwrap();
        assert_eq!(p.blinded().levels(), &[2]);
        assert_eq!(p.blinded().stratum(), StratumId(1));
    }
}
