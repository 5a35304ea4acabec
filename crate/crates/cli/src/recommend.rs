//! `covbal recommend`: rank observed-covariate subsets by how much they reveal about a target.

use itertools::Itertools;
use serde::Serialize;

use covbal_core::procedures::BlockSizes;
use covbal_core::scenarios::PopulationModel;
use covbal_core::theory::{
    classify_regime, conditional_entropy, mutual_information, observed_entropy, unweighted_sum_of_variances,
    UnobservedTarget,
};
use covbal_core::AllocationRatios;

use crate::error::{CliError, CliResult};
use crate::theory::regime_label;

/// One candidate subset. Entropies are in nats; the regime compares `n·p_s` with the block size
/// over strata the data actually populate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendRow {
    pub rank: usize,
    pub subset: String,
    pub strata: usize,
    pub populated_strata: usize,
    pub h_x: f64,
    pub h_u_given_x: f64,
    pub sv_u_given_x: f64,
    pub mutual_information: f64,
    pub regime: String,
    pub min_np_over_b: f64,
    pub max_np_over_b: f64,
}

/// Column order of the recommendation CSV.
pub const RECOMMEND_COLUMNS: [&str; 11] = [
    "rank",
    "subset",
    "strata",
    "populated_strata",
    "h_x",
    "h_u_given_x",
    "sv_u_given_x",
    "mutual_information",
    "regime",
    "min_np_over_b",
    "max_np_over_b",
];

/// Settings for [`recommend`].
#[derive(Debug, Clone)]
pub struct RecommendRequest<'a> {
    pub candidates: &'a [String],
    pub target: &'a [String],
    pub k: usize,
    pub n: usize,
    pub block_size: u32,
    pub ratios: &'a AllocationRatios,
}

/// Every `k`-subset of the candidates, ranked by ascending `H(U|X)`, then descending `H(X)`.
pub fn recommend(model: &PopulationModel, req: &RecommendRequest<'_>) -> CliResult<Vec<RecommendRow>> {
    if req.k == 0 || req.k > req.candidates.len() {
        return Err(CliError::validation(format!(
            "subset size {} must be between 1 and the {} candidate covariates",
            req.k,
            req.candidates.len()
        )));
    }
    if req.target.is_empty() {
        return Err(CliError::validation("the target set of unobserved covariates is empty"));
    }
    let sizes = BlockSizes::from_size(req.ratios, req.block_size).map_err(|e| CliError::validation(e.to_string()))?;
    let mut rows = Vec::new();
    for subset in req.candidates.iter().cloned().combinations(req.k) {
        let pmf = model.joint(&subset, req.target)?;
        let report = classify_regime(&pmf, req.n, &sizes, &[]);
        rows.push(RecommendRow {
            rank: 0,
            subset: subset.join("+"),
            strata: pmf.schema().observed_strata(),
            populated_strata: pmf.observed_marginal().iter().filter(|&&p| p > 0.0).count(),
            h_x: observed_entropy(&pmf),
            h_u_given_x: conditional_entropy(&pmf, UnobservedTarget::All)?,
            sv_u_given_x: unweighted_sum_of_variances(&pmf, UnobservedTarget::All)?,
            mutual_information: mutual_information(&pmf, UnobservedTarget::All)?,
            regime: regime_label(report.regime).to_string(),
            min_np_over_b: report.min_ratio,
            max_np_over_b: report.max_ratio,
        });
    }
    let key = |v: f64| (v * 1e12).round() as i64;
    rows.sort_by(|a, b| {
        key(a.h_u_given_x)
            .cmp(&key(b.h_u_given_x))
            .then(key(b.h_x).cmp(&key(a.h_x)))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}
