//! `covbal theory`: closed-form reference values for every configured metric.

use serde::Serialize;

use covbal_core::ledger::Scope;
use covbal_core::theory::{
    classify_regime, lambda1_sq, lambda2_sq, scope_strata, strpb_variance, tau_cr_sq, tau_sq, StrPbRegime,
};

use crate::config::LoadedConfig;
use crate::error::CliResult;

/// One metric at one sweep point. Standard deviations refer to `n^{-1/2}·D` except `lambda1`
/// and `lambda2`, which are the within-stratum block terms of the unnormalized imbalance.
/// Block terms whose variance formula turns negative (far outside their regime) are absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub param: Option<String>,
    pub param_value: Option<String>,
    pub n: usize,
    pub metric: String,
    pub group: usize,
    pub rho: f64,
    pub tau_cr: f64,
    pub tau: Option<f64>,
    pub strpb_large_n: Option<f64>,
    pub strpb_small_n: Option<f64>,
    pub block_size: Option<u32>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub regime: String,
    pub min_np_over_b: f64,
    pub max_np_over_b: f64,
}

/// Column order of the theory CSV.
pub const THEORY_COLUMNS: [&str; 16] = [
    "param",
    "param_value",
    "n",
    "metric",
    "group",
    "rho",
    "tau_cr",
    "tau",
    "strpb_large_n",
    "strpb_small_n",
    "block_size",
    "lambda1",
    "lambda2",
    "regime",
    "min_np_over_b",
    "max_np_over_b",
];

pub fn regime_label(regime: Option<StrPbRegime>) -> &'static str {
    match regime {
        Some(StrPbRegime::LargeN) => "large_n",
        Some(StrPbRegime::SmallN) => "small_n",
        None => "mixed",
    }
}

pub fn theory(cfg: &LoadedConfig) -> CliResult<Vec<TheoryRow>> {
    let mut rows = Vec::new();
    for point in cfg.points() {
        let setup = cfg.setup(&point)?;
        let schema = setup.scenario.schema();
        let metrics = cfg.metrics(schema)?;
        let sizes = cfg.reference_block_sizes(schema)?;
        let pmf = setup.scenario.joint()?;
        let n = setup.n;
        for m in metrics {
            let rho = cfg.allocation_ratios().get_f64(m.arm);
            let scope = m.scope;
            let tau = if scope.involves_unobserved() {
                Some(tau_sq(&pmf, rho, &scope)?.sqrt())
            } else {
                None
            };
            let has_strpb = scope.involves_unobserved() || matches!(scope, Scope::ObsStratum(_));
            let strpb = |regime| -> CliResult<Option<f64>> {
                if !has_strpb {
                    return Ok(None);
                }
                let v = strpb_variance(&pmf, rho, &scope, regime, n, &sizes)?;
                Ok((v.variance >= 0.0).then(|| v.normalized_sd(n)))
            };
            let strata = scope_strata(&pmf, &scope);
            let report = classify_regime(&pmf, n, &sizes, &strata);
            let single = match scope {
                Scope::ObsStratum(s)
                | Scope::JointStratumMargin { stratum: s, .. }
                | Scope::JointStratumStratum { stratum: s, .. } => Some(s),
                _ => None,
            };
            rows.push(TheoryRow {
                param: point.param_name(),
                param_value: point.label(),
                n,
                metric: m.label(schema),
                group: m.arm + 1,
                rho,
                tau_cr: tau_cr_sq(&pmf, rho, &scope)?.sqrt(),
                tau,
                strpb_large_n: strpb(StrPbRegime::LargeN)?,
                strpb_small_n: strpb(StrPbRegime::SmallN)?,
                block_size: single.map(|s| sizes.size(s)),
                lambda1: single.map(|s| lambda1_sq(rho, sizes.size(s)).sqrt()),
                lambda2: single
                    .map(|s| lambda2_sq(rho, n, pmf.p_s(s), sizes.size(s)))
                    .filter(|v| *v >= 0.0)
                    .map(f64::sqrt),
                regime: regime_label(report.regime).to_string(),
                min_np_over_b: report.min_ratio,
                max_np_over_b: report.max_ratio,
            });
        }
    }
    Ok(rows)
}
