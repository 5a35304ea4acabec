use crate::error::{Error, Result};
use crate::ledger::Scope;
use crate::procedures::BlockSizes;
use crate::schema::StratumId;

use super::pmf::JointPmf;

/// Which within-stratum variance term applies to stratified permuted blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrPbRegime {
    /// `n·p_s` large relative to `B_s`: many completed blocks per stratum.
    LargeN,
    /// `n·p_s` small relative to `B_s`: most strata sit inside their first block.
    SmallN,
}

/// Closed-form `Var[D]` for stratified permuted blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrPbVariance {
    /// Variance of the unnormalized imbalance `D_{n,g}`.
    pub variance: f64,
    /// Set when some involved stratum contradicts the requested regime.
    pub regime_mismatch: bool,
}

impl StrPbVariance {
    /// Standard deviation of `n^{-1/2}·D`.
    pub fn normalized_sd(&self, n: usize) -> f64 {
        (self.variance / n as f64).sqrt()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Ratios(format!("allocation ratio {rho} is not in [0, 1]")));
    }
    Ok(())
}

fn unobserved_only(scope: &Scope) -> Result<()> {
    if !scope.involves_unobserved() {
        return Err(Error::Scope(format!(
            "{scope:?} does not involve unobserved covariates"
        )));
    }
    Ok(())
}

/// `p(event | s)` for the unobserved part of a scope, or `None` when `p_s = 0`.
fn conditional(pmf: &JointPmf, scope: &Scope, s: StratumId) -> Option<f64> {
    match *scope {
        Scope::UnobsMargin { covariate, level } | Scope::JointStratumMargin { covariate, level, .. } => {
            pmf.conditional_margin(s, covariate, level)
        }
        Scope::UnobsStratum(r) | Scope::JointStratumStratum { unobserved: r, .. } => pmf.conditional_stratum(s, r),
        _ => None,
    }
}

/// The observed strata a scope ranges over.
fn strata(pmf: &JointPmf, scope: &Scope) -> Vec<StratumId> {
    match *scope {
        Scope::JointStratumMargin { stratum, .. } | Scope::JointStratumStratum { stratum, .. } => vec![stratum],
        Scope::ObsStratum(s) => vec![s],
        _ => (0..pmf.schema().observed_strata() as u32).map(StratumId).collect(),
    }
}

fn single_stratum(scope: &Scope) -> bool {
    matches!(
        scope,
        Scope::JointStratumMargin { .. } | Scope::JointStratumStratum { .. } | Scope::ObsStratum(_)
    )
}

fn undefined(s: StratumId) -> Error {
    Error::UndefinedConditional(format!("observed stratum {} has zero probability", s.0))
}

/// Asymptotic variance `τ_g²` of `n^{-1/2}·D_{n,g}` for an unobserved scope under a procedure
/// that balances every observed stratum: `ρ(1−ρ)·Σ_s p_s·c_s(1−c_s)` with `c_s` the
/// conditional probability of the unobserved event. Strata with `p_s = 0` are skipped.
pub fn tau_sq(pmf: &JointPmf, rho: f64, scope: &Scope) -> Result<f64> {
    check_rho(rho)?;
    scope.validate(pmf.schema())?;
    unobserved_only(scope)?;
    let mut total = 0.0;
    for s in strata(pmf, scope) {
        match conditional(pmf, scope, s) {
            Some(c) => total += pmf.p_s(s) * c * (1.0 - c),
            None if single_stratum(scope) => return Err(undefined(s)),
            None => {}
        }
    }
    Ok(rho * (1.0 - rho) * total)
}

/// Variance of `n^{-1/2}·D_{n,g}` under complete randomization: `ρ(1−ρ)·P(event)`.
pub fn tau_cr_sq(pmf: &JointPmf, rho: f64, scope: &Scope) -> Result<f64> {
    check_rho(rho)?;
    scope.validate(pmf.schema())?;
    let p = match *scope {
        Scope::Overall => 1.0,
        Scope::ObsMargin { covariate, level } => pmf.observed_margin(covariate, level)?,
        Scope::ObsStratum(s) => pmf.p_s(s),
        Scope::UnobsMargin { covariate, level } => pmf.unobserved_margin(covariate, level),
        Scope::UnobsStratum(r) => pmf.unobserved_marginal()[r.index()],
        Scope::JointStratumMargin { stratum, covariate, level } => pmf.joint_stratum_margin(stratum, covariate, level),
        Scope::JointStratumStratum { stratum, unobserved } => pmf.prob(stratum, unobserved),
    };
    Ok(rho * (1.0 - rho) * p)
}

/// `λ₁² = ρ(1−ρ)(B+1)/6`.
pub fn lambda1_sq(rho: f64, block_size: u32) -> f64 {
    rho * (1.0 - rho) * (block_size as f64 + 1.0) / 6.0
}

/// `λ₂² = ρ(1−ρ)·n·p_s·[1 − p_s(n−1)/B]`.
pub fn lambda2_sq(rho: f64, n: usize, p_s: f64, block_size: u32) -> f64 {
    let n = n as f64;
    rho * (1.0 - rho) * n * p_s * (1.0 - p_s * (n - 1.0) / block_size as f64)
}

fn mismatched(regime: StrPbRegime, n: usize, p_s: f64, block_size: u32) -> bool {
    let expected = n as f64 * p_s;
    match regime {
        StrPbRegime::LargeN => expected < block_size as f64,
        StrPbRegime::SmallN => expected > block_size as f64,
    }
}

/// `Var[D_{n,g}]` for stratified permuted blocks: `Σ_s c_s²·λ²(s) + n·τ_g²`, where `c_s` is
/// the conditional probability of the unobserved event (1 for an observed stratum scope).
pub fn strpb_variance(
    pmf: &JointPmf,
    rho: f64,
    scope: &Scope,
    regime: StrPbRegime,
    n: usize,
    block_sizes: &BlockSizes,
) -> Result<StrPbVariance> {
    check_rho(rho)?;
    scope.validate(pmf.schema())?;
    let observed_stratum = matches!(scope, Scope::ObsStratum(_));
    if !observed_stratum {
        unobserved_only(scope)?;
    }
    let mut within = 0.0;
    let mut regime_mismatch = false;
    for s in strata(pmf, scope) {
        let p_s = pmf.p_s(s);
        let c = if observed_stratum {
            (p_s > 0.0).then_some(1.0)
        } else {
            conditional(pmf, scope, s)
        };
        let Some(c) = c else {
            if single_stratum(scope) {
                return Err(undefined(s));
            }
            continue;
        };
        let b = block_sizes.size(s);
        let lambda = match regime {
            StrPbRegime::LargeN => lambda1_sq(rho, b),
            StrPbRegime::SmallN => lambda2_sq(rho, n, p_s, b),
        };
        regime_mismatch |= mismatched(regime, n, p_s, b);
        within += c * c * lambda;
    }
    let tau = if observed_stratum { 0.0 } else { tau_sq(pmf, rho, scope)? };
    Ok(StrPbVariance {
        variance: within + n as f64 * tau,
        regime_mismatch,
    })
}

/// Where `n·p_s` sits relative to `B_s` across the strata with positive mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    /// `LargeN` when `n·p_s ≥ B_s` in every stratum, `SmallN` when `n·p_s ≤ B_s` in every
    /// stratum, `None` when the strata disagree.
    pub regime: Option<StrPbRegime>,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Classifies the regime from `n·p_s / B_s` over the given strata (all strata when empty).
pub fn classify_regime(pmf: &JointPmf, n: usize, block_sizes: &BlockSizes, only: &[StratumId]) -> RegimeReport {
    let all: Vec<StratumId>;
    let strata = if only.is_empty() {
        all = (0..pmf.schema().observed_strata() as u32).map(StratumId).collect();
        &all
    } else {
        only
    };
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for &s in strata {
        let p = pmf.p_s(s);
        if p > 0.0 {
            let ratio = n as f64 * p / block_sizes.size(s) as f64;
            min_ratio = min_ratio.min(ratio);
            max_ratio = max_ratio.max(ratio);
        }
    }
    let regime = if min_ratio >= 1.0 {
        Some(StrPbRegime::LargeN)
    } else if max_ratio <= 1.0 {
        Some(StrPbRegime::SmallN)
    } else {
        None
    };
    RegimeReport {
        regime,
        min_ratio,
        max_ratio,
    }
}

/// The observed strata that carry a scope's event.
pub fn scope_strata(pmf: &JointPmf, scope: &Scope) -> Vec<StratumId> {
    strata(pmf, scope)
}
