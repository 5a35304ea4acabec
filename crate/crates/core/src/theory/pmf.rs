use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schema::{Block, Covariate, CovariateSchema, Level, StratumId};

const MASS_TOLERANCE: f64 = 1e-12;

/// Joint probability table over (observed stratum `s`, unobserved stratum `r`).
#[derive(Debug, Clone)]
pub struct JointPmf {
    schema: Arc<CovariateSchema>,
    table: Vec<f64>,
    observed: Vec<f64>,
    unobserved_levels: Vec<Vec<Level>>,
}

/// Which unobserved quantity a conditional statistic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnobservedTarget {
    /// A single unobserved covariate `U_j` (0-based index).
    Covariate(usize),
    /// The whole unobserved block `U`.
    All,
}

/// `p(s, t)` for one target, `rows` observed strata by `cols` target values.
#[derive(Debug, Clone)]
pub struct TargetTable {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<f64>,
}

impl TargetTable {
    pub fn cell(&self, s: usize, t: usize) -> f64 {
        self.cells[s * self.cols + t]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.cells.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.cells.chunks(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

impl JointPmf {
    /// `table[s * L_unobs + r] = p(s, r)`.
    pub fn new(schema: Arc<CovariateSchema>, table: Vec<f64>) -> Result<Self> {
        let l_obs = schema.observed_strata();
        let l_unobs = schema.unobserved_strata();
        if table.len() != l_obs * l_unobs {
            return Err(Error::Pmf(format!(
                "table has {} cells, schema needs {}",
                table.len(),
                l_obs * l_unobs
            )));
        }
        if let Some(v) = table.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Pmf(format!("invalid probability {v}")));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Pmf(format!("total mass {total} is not 1")));
        }
        let observed = table.chunks(l_unobs).map(|row| row.iter().sum()).collect();
        let unobserved_levels = (0..l_unobs as u32)
            .map(|r| schema.stratum_levels(Block::Unobserved, StratumId(r)))
            .collect::<Result<_>>()?;
        Ok(Self {
            schema,
            table,
            observed,
            unobserved_levels,
        })
    }

    /// Builds the table from a cell function of (observed levels, unobserved levels).
    pub fn from_fn(schema: Arc<CovariateSchema>, mut f: impl FnMut(&[Level], &[Level]) -> f64) -> Result<Self> {
        let l_obs = schema.observed_strata() as u32;
        let l_unobs = schema.unobserved_strata() as u32;
        let unobs: Vec<Vec<Level>> = (0..l_unobs)
            .map(|r| schema.stratum_levels(Block::Unobserved, StratumId(r)))
            .collect::<Result<_>>()?;
        let mut table = Vec::with_capacity((l_obs * l_unobs) as usize);
        for s in 0..l_obs {
            let obs = schema.stratum_levels(Block::Observed, StratumId(s))?;
            for u in &unobs {
                table.push(f(&obs, u));
            }
        }
        Self::new(schema, table)
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    fn l_unobs(&self) -> usize {
        self.schema.unobserved_strata()
    }

    /// `p_{(s,r)}`.
    pub fn prob(&self, s: StratumId, r: StratumId) -> f64 {
        self.table[s.index() * self.l_unobs() + r.index()]
    }

    /// `p_s` for every observed stratum.
    pub fn observed_marginal(&self) -> &[f64] {
        &self.observed
    }

    pub fn p_s(&self, s: StratumId) -> f64 {
        self.observed[s.index()]
    }

    /// `P(X_k = level)`.
    pub fn observed_margin(&self, covariate: usize, level: Level) -> Result<f64> {
        let mut total = 0.0;
        for (s, p) in self.observed.iter().enumerate() {
            if self.schema.stratum_levels(Block::Observed, StratumId(s as u32))?[covariate] == level {
                total += p;
            }
        }
        Ok(total)
    }

    /// `p_r` for every unobserved stratum.
    pub fn unobserved_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.l_unobs()];
        for row in self.table.chunks(self.l_unobs()) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// `p_{(s, r_j)}`.
    pub fn joint_stratum_margin(&self, s: StratumId, covariate: usize, level: Level) -> f64 {
        let row = &self.table[s.index() * self.l_unobs()..(s.index() + 1) * self.l_unobs()];
        row.iter()
            .zip(&self.unobserved_levels)
            .filter(|(_, lv)| lv[covariate] == level)
            .map(|(p, _)| p)
            .sum()
    }

    /// `p_{(j; r_j)}`.
    pub fn unobserved_margin(&self, covariate: usize, level: Level) -> f64 {
        (0..self.schema.observed_strata() as u32)
            .map(|s| self.joint_stratum_margin(StratumId(s), covariate, level))
            .sum()
    }

    /// `p_{(j; r_j)|s}`; `None` when `p_s = 0`.
    pub fn conditional_margin(&self, s: StratumId, covariate: usize, level: Level) -> Option<f64> {
        let ps = self.p_s(s);
        (ps > 0.0).then(|| self.joint_stratum_margin(s, covariate, level) / ps)
    }

    /// `p_{r|s}`; `None` when `p_s = 0`.
    pub fn conditional_stratum(&self, s: StratumId, r: StratumId) -> Option<f64> {
        let ps = self.p_s(s);
        (ps > 0.0).then(|| self.prob(s, r) / ps)
    }

    /// `p(s, t)` for the target: the values of `U_j`, or the unobserved strata.
    pub fn target_table(&self, target: UnobservedTarget) -> Result<TargetTable> {
        let rows = self.schema.observed_strata();
        match target {
            UnobservedTarget::All => Ok(TargetTable {
                rows,
                cols: self.l_unobs(),
                cells: self.table.clone(),
            }),
            UnobservedTarget::Covariate(j) => {
                let cov = self.schema.unobserved().get(j).ok_or_else(|| {
                    Error::Scope(format!("unobserved covariate index {j} out of range"))
                })?;
                let cols = cov.levels as usize;
                let mut cells = vec![0.0; rows * cols];
                for (s, row) in self.table.chunks(self.l_unobs()).enumerate() {
                    for (p, lv) in row.iter().zip(&self.unobserved_levels) {
                        cells[s * cols + lv[j] as usize - 1] += p;
                    }
                }
                Ok(TargetTable { rows, cols, cells })
            }
        }
    }

    /// Re-splits the table: marginalizes onto the named covariates, which may come from
    /// either block, with the given observed/unobserved assignment.
    pub fn project<S: AsRef<str>>(&self, observed: &[S], unobserved: &[S]) -> Result<JointPmf> {
        let locate = |name: &str| -> Result<(Block, usize, Covariate)> {
            let (block, idx) = self
                .schema
                .find(name)
                .ok_or_else(|| Error::Schema(format!("unknown covariate {name:?}")))?;
            Ok((block, idx, self.schema.covariates(block)[idx].clone()))
        };
        let obs: Vec<_> = observed.iter().map(|n| locate(n.as_ref())).collect::<Result<_>>()?;
        let unobs: Vec<_> = unobserved.iter().map(|n| locate(n.as_ref())).collect::<Result<_>>()?;
        let schema = Arc::new(CovariateSchema::new(
            obs.iter().map(|c| c.2.clone()).collect(),
            unobs.iter().map(|c| c.2.clone()).collect(),
        )?);
        let mut table = vec![0.0; schema.observed_strata() * schema.unobserved_strata()];
        let mut new_obs = vec![0; obs.len()];
        let mut new_unobs = vec![0; unobs.len()];
        for s in 0..self.schema.observed_strata() as u32 {
            let s_levels = self.schema.stratum_levels(Block::Observed, StratumId(s))?;
            for (r, r_levels) in self.unobserved_levels.iter().enumerate() {
                let p = self.table[s as usize * self.l_unobs() + r];
                if p == 0.0 {
                    continue;
                }
                let pick = |(block, idx, _): &(Block, usize, Covariate)| match block {
                    Block::Observed => s_levels[*idx],
                    Block::Unobserved => r_levels[*idx],
                };
                for (slot, c) in new_obs.iter_mut().zip(&obs) {
                    *slot = pick(c);
                }
                for (slot, c) in new_unobs.iter_mut().zip(&unobs) {
                    *slot = pick(c);
                }
                let ns = schema.stratum_of(Block::Observed, &new_obs)?;
                let nr = schema.stratum_of(Block::Unobserved, &new_unobs)?;
                table[ns.index() * schema.unobserved_strata() + nr.index()] += p;
            }
        }
        JointPmf::new(schema, table)
    }
}
