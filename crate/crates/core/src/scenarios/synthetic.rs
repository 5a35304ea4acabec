//! A schema-compatible stand-in for a six-column demographic cohort: four observed columns
//! (gender, site, race, marital status) and two unobserved ones (employment, education).
//!
//! Employment and education depend only on the (site, marital status) pair, so that pair is
//! both the highest-entropy observed pair and the most informative one about the unobserved
//! block.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::schema::{Covariate, CovariateSchema, Level};
use crate::theory::JointPmf;

use super::cohort::RecodeMap;
use super::model::{PopulationModel, TabularJoint};

/// Column names in file order.
pub const SYNTHETIC_COLUMNS: [&str; 6] = [
    "Gender",
    "SITEID",
    "Major Race",
    "Marital Status",
    "Employment Pattern",
    "Education Completed Years",
];

/// Number of leading columns treated as observed.
pub const SYNTHETIC_OBSERVED: usize = 4;

const GENDER: [f64; 2] = [0.4, 0.6];
const SITE: [f64; 3] = [0.34, 0.33, 0.33];
const RACE: [f64; 5] = [0.7, 0.2, 0.04, 0.03, 0.03];
const MARITAL: [f64; 3] = [0.35, 0.33, 0.32];
const EMPLOYMENT_MODE: f64 = 0.7;
const EDUCATION_MODE: f64 = 0.8;

fn raw_values() -> [Vec<(&'static str, Level)>; 6] {
    let education: Vec<(&'static str, Level)> = [
        ("6", 1),
        ("7", 1),
        ("8", 1),
        ("9", 1),
        ("10", 1),
        ("11", 1),
        ("12", 2),
        ("13", 3),
        ("14", 3),
        ("15", 3),
        ("16", 3),
        ("18", 3),
        ("20", 3),
    ]
    .to_vec();
    [
        vec![("Male", 1), ("Female", 2)],
        vec![("76", 1), ("135", 2), ("464", 3)],
        vec![
            ("White", 1),
            ("Hispanic or Latino", 1),
            ("African American or Black", 2),
            ("Asian", 3),
            ("Pacific Islander", 3),
            ("American Indian or Alaska Native", 4),
            ("Other", 5),
        ],
        vec![
            ("Legally married", 1),
            ("Cohabit", 1),
            ("Widowed", 2),
            ("Separated", 2),
            ("Divorced", 2),
            ("Never married", 3),
        ],
        vec![
            ("Full time", 1),
            ("Part time", 2),
            ("Homemaker", 2),
            ("Student", 3),
            ("Military service", 3),
            ("Retired", 4),
            ("Disabled", 4),
            ("Unemployed", 4),
            ("Controlled environment", 4),
        ],
        education,
    ]
}

/// Raw value → level map for the six columns, with several raw values merged per level.
pub fn demographic_recode_map() -> RecodeMap {
    let mut map = BTreeMap::new();
    for (name, values) in SYNTHETIC_COLUMNS.iter().zip(raw_values()) {
        map.insert(
            name.to_string(),
            values.into_iter().map(|(raw, l)| (raw.to_string(), l)).collect(),
        );
    }
    RecodeMap(map)
}

fn employment_mode(site: Level, marital: Level) -> Level {
    ((site + marital) % 4) + 1
}

fn education_mode(site: Level, marital: Level) -> Level {
    ((site + 2 * marital) % 3) + 1
}

fn conditional(level: Level, mode: Level, levels: usize, mode_mass: f64) -> f64 {
    if level == mode {
        mode_mass
    } else {
        (1.0 - mode_mass) / (levels - 1) as f64
    }
}

/// The exact generating distribution, four observed and two unobserved columns.
pub fn synthetic_model() -> Result<PopulationModel> {
    let cols: Vec<Covariate> = SYNTHETIC_COLUMNS
        .iter()
        .zip([2, 3, 5, 3, 4, 3])
        .map(|(n, l)| Covariate::new(*n, l))
        .collect();
    let schema = Arc::new(CovariateSchema::new(
        cols[..SYNTHETIC_OBSERVED].to_vec(),
        cols[SYNTHETIC_OBSERVED..].to_vec(),
    )?);
    let pmf = JointPmf::from_fn(schema, |x, u| {
        let p_x = GENDER[x[0] as usize - 1] * SITE[x[1] as usize - 1] * RACE[x[2] as usize - 1] * MARITAL[x[3] as usize - 1];
        let e = conditional(u[0], employment_mode(x[1], x[3]), 4, EMPLOYMENT_MODE);
        let d = conditional(u[1], education_mode(x[1], x[3]), 3, EDUCATION_MODE);
        p_x * e * d
    })?;
    Ok(PopulationModel::TabularJoint(TabularJoint::new(pmf)))
}

/// `n` raw-valued rows drawn from [`synthetic_model`]; each level is rendered as a uniformly
/// chosen raw value among those merged into it.
pub fn synthetic_records<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<Vec<String>>> {
    let model = synthetic_model()?;
    let raws = raw_values();
    let by_level: Vec<BTreeMap<Level, Vec<&str>>> = raws
        .iter()
        .map(|values| {
            let mut m: BTreeMap<Level, Vec<&str>> = BTreeMap::new();
            for (raw, l) in values {
                m.entry(*l).or_default().push(raw);
            }
            m
        })
        .collect();
    let mut sampler = model.sampler();
    let mut levels = vec![0; SYNTHETIC_COLUMNS.len()];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        sampler.next_into(rng, &mut levels)?;
        let row = levels
            .iter()
            .zip(&by_level)
            .map(|(l, m)| m[l].choose(rng).expect("every level has a raw value").to_string())
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

/// Writes a headered synthetic cohort of `n` rows generated from `seed`.
pub fn write_synthetic_cohort<W: Write>(writer: W, n: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = synthetic_records(n, &mut rng)?;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SYNTHETIC_COLUMNS)?;
    for row in rows {
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
