//! Closed-form asymptotic variances, stratified-block variance terms, and entropy
//! diagnostics, all evaluated on an exact joint distribution of the covariates.

mod entropy;
mod pmf;
mod variance;

pub use entropy::{
    conditional_entropy, entropy, entropy_sandwich, joint_entropy, mutual_information, observed_entropy,
    observed_given_target_entropy, sum_of_variances, target_entropy, unweighted_sum_of_variances,
    weighted_cond_entropy,
};
pub use pmf::{JointPmf, TargetTable, UnobservedTarget};
pub use variance::{
    classify_regime, lambda1_sq, lambda2_sq, scope_strata, strpb_variance, tau_cr_sq, tau_sq, RegimeReport,
    StrPbRegime, StrPbVariance,
};
