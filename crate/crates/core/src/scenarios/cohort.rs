use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Covariate, CovariateSchema, Level};
use crate::theory::JointPmf;

const MAX_REPORTED_ROWS: usize = 10;

/// Column → {raw value → 1-based level}. Several raw values may share a level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecodeMap(pub BTreeMap<String, BTreeMap<String, Level>>);

impl RecodeMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: Self = serde_json::from_str(text)?;
        for column in map.0.keys() {
            map.levels(column)?;
        }
        Ok(map)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Number of levels of a column; levels must cover `1..=L` with `L ≥ 2`.
    pub fn levels(&self, column: &str) -> Result<Level> {
        let values = self
            .0
            .get(column)
            .ok_or_else(|| Error::Ingest(format!("no recode entry for column {column:?}")))?;
        let used: HashSet<Level> = values.values().copied().collect();
        let max = used.iter().copied().max().unwrap_or(0);
        if max < 2 || used.contains(&0) || used.len() != max as usize {
            return Err(Error::Ingest(format!(
                "column {column:?} must map onto levels 1..=L with L ≥ 2 and no gaps"
            )));
        }
        Ok(max)
    }

    fn recode(&self, column: &str, raw: &str) -> Option<Level> {
        self.0.get(column)?.get(raw.trim()).copied()
    }

    /// A canonical raw value for each level: the first raw value in sorted order.
    fn inverse(&self, column: &str) -> BTreeMap<Level, &str> {
        let mut out = BTreeMap::new();
        if let Some(values) = self.0.get(column) {
            for (raw, &level) in values {
                out.entry(level).or_insert(raw.as_str());
            }
        }
        out
    }
}

/// How a cohort hands patients to a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalPolicy {
    /// A uniformly random ordering of the whole cohort, without replacement.
    #[default]
    Permutation,
    /// Independent uniform draws with replacement.
    Bootstrap,
}

/// Recoded patient rows.
#[derive(Debug, Clone)]
pub struct EmpiricalCohort {
    columns: Vec<Covariate>,
    levels: Vec<Level>,
    arrival: ArrivalPolicy,
}

impl EmpiricalCohort {
    pub fn new(columns: Vec<Covariate>, rows: Vec<Vec<Level>>, arrival: ArrivalPolicy) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Ingest("cohort has no columns".into()));
        }
        if rows.is_empty() {
            return Err(Error::Ingest("cohort has no rows".into()));
        }
        let mut levels = Vec::with_capacity(rows.len() * columns.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Ingest(format!("row {} has {} values", i + 1, row.len())));
            }
            for (col, &l) in columns.iter().zip(row) {
                if l == 0 || l > col.levels {
                    return Err(Error::Ingest(format!("row {}: level {l} invalid for {}", i + 1, col.name)));
                }
            }
            levels.extend_from_slice(row);
        }
        Ok(Self {
            columns,
            levels,
            arrival,
        })
    }

    pub fn columns(&self) -> &[Covariate] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.levels.len() / self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Level] {
        let k = self.columns.len();
        &self.levels[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Level]> {
        self.levels.chunks(self.columns.len())
    }

    pub fn arrival(&self) -> ArrivalPolicy {
        self.arrival
    }

    pub fn with_arrival(mut self, arrival: ArrivalPolicy) -> Self {
        self.arrival = arrival;
        self
    }

    /// Count of each level, per column.
    pub fn level_frequencies(&self) -> Vec<Vec<u64>> {
        let mut out: Vec<Vec<u64>> = self.columns.iter().map(|c| vec![0; c.levels as usize]).collect();
        for row in self.rows() {
            for (counts, &l) in out.iter_mut().zip(row) {
                counts[l as usize - 1] += 1;
            }
        }
        out
    }

    /// Writes the cohort as CSV, each level rendered as its canonical raw value.
    pub fn write_csv<W: Write>(&self, recode: &RecodeMap, writer: W) -> Result<()> {
        let inverse: Vec<_> = self.columns.iter().map(|c| recode.inverse(&c.name)).collect();
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in self.rows() {
            let mut record = Vec::with_capacity(row.len());
            for ((col, inv), l) in self.columns.iter().zip(&inverse).zip(row) {
                let raw = inv
                    .get(l)
                    .ok_or_else(|| Error::Ingest(format!("no raw value for {}={l}", col.name)))?;
                record.push(*raw);
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a headered CSV and recodes every column named in the map (in header order); other
/// columns are ignored.
pub fn load_cohort_from_reader<R: Read>(reader: R, recode: &RecodeMap) -> Result<EmpiricalCohort> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    let mut picked = Vec::new();
    for (idx, name) in header.iter().enumerate() {
        let name = name.trim();
        if recode.0.contains_key(name) {
            picked.push((idx, Covariate::new(name, recode.levels(name)?)));
        }
    }
    for column in recode.0.keys() {
        if !picked.iter().any(|(_, c)| &c.name == column) {
            return Err(Error::Ingest(format!("missing column {column:?}")));
        }
    }
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    let mut problem_count = 0;
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(rows.len() as u64 + 2, |p| p.line());
        let mut row = Vec::with_capacity(picked.len());
        for (idx, col) in &picked {
            let raw = record.get(*idx).unwrap_or("");
            match recode.recode(&col.name, raw) {
                Some(l) => row.push(l),
                None => {
                    problem_count += 1;
                    if problems.len() < MAX_REPORTED_ROWS {
                        problems.push(format!("line {line}: unmapped {} value {raw:?}", col.name));
                    }
                }
            }
        }
        if row.len() == picked.len() {
            rows.push(row);
        }
    }
    if problem_count > 0 {
        let more = problem_count - problems.len();
        let suffix = if more > 0 { format!(" (and {more} more)") } else { String::new() };
        return Err(Error::Ingest(format!("{}{suffix}", problems.join("; "))));
    }
    if rows.is_empty() {
        return Err(Error::Ingest("no data rows".into()));
    }
    EmpiricalCohort::new(picked.into_iter().map(|(_, c)| c).collect(), rows, ArrivalPolicy::default())
}

pub fn load_cohort(csv_path: impl AsRef<Path>, recode: &RecodeMap) -> Result<EmpiricalCohort> {
    let path = csv_path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingest(format!("cannot open {}: {e}", path.display())))?;
    load_cohort_from_reader(file, recode)
}

/// Relative-frequency joint over the given split of the cohort's columns.
pub fn empirical_joint<S: AsRef<str>>(cohort: &EmpiricalCohort, observed: &[S], unobserved: &[S]) -> Result<JointPmf> {
    let mut seen = HashSet::new();
    let mut locate = |name: &str| -> Result<usize> {
        if !seen.insert(name.to_string()) {
            return Err(Error::Schema(format!("covariate {name:?} selected twice")));
        }
        cohort
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate {name:?}")))
    };
    let obs: Vec<usize> = observed.iter().map(|n| locate(n.as_ref())).collect::<Result<_>>()?;
    let unobs: Vec<usize> = unobserved.iter().map(|n| locate(n.as_ref())).collect::<Result<_>>()?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| cohort.columns[i].clone()).collect();
    let schema = Arc::new(CovariateSchema::new(pick(&obs), pick(&unobs))?);
    let l_unobs = schema.unobserved_strata();
    let mut counts = vec![0u64; schema.observed_strata() * l_unobs];
    let mut x = vec![0; obs.len()];
    let mut u = vec![0; unobs.len()];
    for row in cohort.rows() {
        for (slot, &i) in x.iter_mut().zip(&obs) {
            *slot = row[i];
        }
        for (slot, &i) in u.iter_mut().zip(&unobs) {
            *slot = row[i];
        }
        let s = schema.stratum_of(crate::schema::Block::Observed, &x)?;
        let r = schema.stratum_of(crate::schema::Block::Unobserved, &u)?;
        counts[s.index() * l_unobs + r.index()] += 1;
    }
    let n = cohort.len() as f64;
    JointPmf::new(schema, counts.into_iter().map(|c| c as f64 / n).collect())
}
