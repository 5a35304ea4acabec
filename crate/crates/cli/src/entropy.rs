//! `covbal entropy`: conditional entropy and sum-of-variance diagnostics of a split.

use serde::Serialize;

use covbal_core::theory::{
    conditional_entropy, mutual_information, observed_entropy, target_entropy, unweighted_sum_of_variances,
    JointPmf, UnobservedTarget,
};
use covbal_core::AllocationRatios;

use crate::config::LoadedConfig;
use crate::error::CliResult;

/// Diagnostics for one target at one sweep point. Rows with an empty `group` are unweighted;
/// rows for group `g` scale `h_cond`, `sv` and `margin` by `weight = ρ_g(1−ρ_g)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub param: Option<String>,
    pub param_value: Option<String>,
    /// An unobserved covariate name, or `U` for the whole unobserved block.
    pub target: String,
    pub group: Option<usize>,
    pub weight: f64,
    pub h_x: f64,
    pub h_target: f64,
    pub h_cond: f64,
    pub sv: f64,
    /// `h_cond − sv`, never negative.
    pub margin: f64,
    pub mutual_information: f64,
}

/// Column order of the entropy CSV.
pub const ENTROPY_COLUMNS: [&str; 11] = [
    "param",
    "param_value",
    "target",
    "group",
    "weight",
    "h_x",
    "h_target",
    "h_cond",
    "sv",
    "margin",
    "mutual_information",
];

/// Rows for every target of `pmf`: each unobserved covariate, then the whole block.
pub fn entropy_rows(
    pmf: &JointPmf,
    ratios: Option<&AllocationRatios>,
    param: Option<String>,
    param_value: Option<String>,
) -> CliResult<Vec<EntropyRow>> {
    let h_x = observed_entropy(pmf);
    let unobserved = pmf.schema().unobserved();
    let targets = unobserved
        .iter()
        .enumerate()
        .map(|(j, c)| (c.name.clone(), UnobservedTarget::Covariate(j)))
        .chain([("U".to_string(), UnobservedTarget::All)]);
    let mut rows = Vec::new();
    for (name, target) in targets {
        let h_target = target_entropy(pmf, target)?;
        let h_cond = conditional_entropy(pmf, target)?;
        let sv = unweighted_sum_of_variances(pmf, target)?;
        let mi = mutual_information(pmf, target)?;
        let weights = std::iter::once((None, 1.0)).chain(
            ratios
                .into_iter()
                .flat_map(|r| r.to_f64_vec().into_iter().enumerate())
                .map(|(g, rho)| (Some(g + 1), rho * (1.0 - rho))),
        );
        for (group, weight) in weights {
            rows.push(EntropyRow {
                param: param.clone(),
                param_value: param_value.clone(),
                target: name.clone(),
                group,
                weight,
                h_x,
                h_target,
                h_cond: weight * h_cond,
                sv: weight * sv,
                margin: (weight * (h_cond - sv)).max(0.0),
                mutual_information: mi,
            });
        }
    }
    Ok(rows)
}

/// Diagnostics at every sweep point of a configuration.
pub fn entropy_from_config(cfg: &LoadedConfig) -> CliResult<Vec<EntropyRow>> {
    let mut rows = Vec::new();
    for point in cfg.points() {
        let setup = cfg.setup(&point)?;
        let pmf = setup.scenario.joint()?;
        rows.extend(entropy_rows(
            &pmf,
            Some(cfg.allocation_ratios()),
            point.param_name(),
            point.label(),
        )?);
    }
    Ok(rows)
}
