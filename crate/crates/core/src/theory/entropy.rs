use crate::error::{Error, Result};

use super::pmf::{JointPmf, TargetTable, UnobservedTarget};

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| plogp(v)).sum::<f64>()
}

fn conditional_entropy_of(table: &TargetTable) -> f64 {
    let mut h = 0.0;
    for (row, p_s) in table.cells.chunks(table.cols).zip(table.row_sums()) {
        if p_s > 0.0 {
            h -= p_s * row.iter().map(|&p| plogp(p / p_s)).sum::<f64>();
        }
    }
    h
}

fn unweighted_sv_of(table: &TargetTable) -> f64 {
    let mut sv = 0.0;
    for (row, p_s) in table.cells.chunks(table.cols).zip(table.row_sums()) {
        if p_s > 0.0 {
            sv += p_s * row.iter().map(|&p| (p / p_s) * (1.0 - p / p_s)).sum::<f64>();
        }
    }
    sv
}

/// `H(X)` of the observed block.
pub fn observed_entropy(joint: &JointPmf) -> f64 {
    entropy(joint.observed_marginal())
}

/// `H(U_j)` or `H(U)`.
pub fn target_entropy(joint: &JointPmf, target: UnobservedTarget) -> Result<f64> {
    Ok(entropy(&joint.target_table(target)?.col_sums()))
}

/// `H(X, U_j)` or `H(X, U)`.
pub fn joint_entropy(joint: &JointPmf, target: UnobservedTarget) -> Result<f64> {
    Ok(entropy(&joint.target_table(target)?.cells))
}

/// `H(U_j | X)` or `H(U | X)` in nats; strata with `p_s = 0` contribute nothing.
pub fn conditional_entropy(joint: &JointPmf, target: UnobservedTarget) -> Result<f64> {
    Ok(conditional_entropy_of(&joint.target_table(target)?))
}

/// `H(X | U_j)` or `H(X | U)`.
pub fn observed_given_target_entropy(joint: &JointPmf, target: UnobservedTarget) -> Result<f64> {
    let table = joint.target_table(target)?;
    let p_t = table.col_sums();
    let mut h = 0.0;
    for (t, &pt) in p_t.iter().enumerate() {
        if pt > 0.0 {
            h -= pt * (0..table.rows).map(|s| plogp(table.cell(s, t) / pt)).sum::<f64>();
        }
    }
    Ok(h)
}

/// `I(X; U_j)` or `I(X; U)` as `H(target) − H(target | X)`, clamped at 0 against rounding.
pub fn mutual_information(joint: &JointPmf, target: UnobservedTarget) -> Result<f64> {
    let table = joint.target_table(target)?;
    Ok((entropy(&table.col_sums()) - conditional_entropy_of(&table)).max(0.0))
}

/// `ρ(1−ρ)·H(target | X)`.
pub fn weighted_cond_entropy(joint: &JointPmf, rho: f64, target: UnobservedTarget) -> Result<f64> {
    Ok(rho * (1.0 - rho) * conditional_entropy(joint, target)?)
}

/// `Σ_t Σ_s p_s·c(1−c)` over the target's values, with `c = p(t | s)`.
pub fn unweighted_sum_of_variances(joint: &JointPmf, target: UnobservedTarget) -> Result<f64> {
    Ok(unweighted_sv_of(&joint.target_table(target)?))
}

/// Sum of the asymptotic variances `τ_g²` over every margin (or stratum) of the target.
pub fn sum_of_variances(joint: &JointPmf, rho: f64, target: UnobservedTarget) -> Result<f64> {
    Ok(rho * (1.0 - rho) * unweighted_sum_of_variances(joint, target)?)
}

/// Bounds on `H(U* | X*)` from `H(U*)`, `H(X*)` and `H(W)`, when `W` determines everything:
/// `max(0, H_U − H_X) ≤ H(U*|X*) ≤ H_W − H_X`.
pub fn entropy_sandwich(h_u: f64, h_x: f64, h_w: f64) -> Result<(f64, f64)> {
    if [h_u, h_x, h_w].iter().any(|v| v.is_nan()) {
        return Err(Error::NotANumber("entropy sandwich input".into()));
    }
    if h_u < 0.0 || h_x < 0.0 || h_x > h_w {
        return Err(Error::InfeasibleBounds {
            lower: h_u - h_x,
            upper: h_w - h_x,
        });
    }
    let lower = (h_u - h_x).max(0.0);
    let upper = h_w - h_x;
    if lower > upper {
        return Err(Error::InfeasibleBounds { lower, upper });
    }
    Ok((lower, upper))
}
