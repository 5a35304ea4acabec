//! Sequential allocation procedures: complete randomization, stratified permuted blocks,
//! and weighted covariate-adaptive randomization.
//!
//! Every procedure consumes a [`BlindedProfile`] and a caller-supplied random stream and
//! returns a 0-based arm index.

mod adaptive;
mod block;
mod cr;

use std::sync::Arc;

use rand::Rng;

pub use adaptive::{CarState, CarWeights};
pub use block::{new_str_pb, BlockSizes, StrPbState};
pub use cr::assign_cr;

use crate::error::{Error, Result};
use crate::ratio::{to_f64, AllocationRatios, Rational};
use crate::schema::{BlindedProfile, CovariateSchema};

const SUM_TOLERANCE: f64 = 1e-12;

/// Rank-indexed assignment probabilities, stored in ascending order.
///
/// The arm with the k-th largest potential imbalance receives `values()[k-1]`, so the most
/// imbalancing arm gets the smallest probability. With the ratios sorted ascending the
/// values must satisfy `p_k − ρ_k` non-decreasing in `k` and `p_1 − ρ_1 < 0 < p_m − ρ_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedProbabilities {
    values: Vec<f64>,
}

impl BiasedProbabilities {
    pub fn new(mut values: Vec<f64>, ratios: &AllocationRatios) -> Result<Self> {
        let bad = |msg: String| Err(Error::BiasedProbabilities(msg));
        if values.len() != ratios.arms() {
            return bad(format!("{} values for {} arms", values.len(), ratios.arms()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return bad(format!("value {v} is not in (0, 1)"));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return bad(format!("values sum to {total}, not 1"));
        }
        values.sort_by(f64::total_cmp);
        let mut sorted_ratios = ratios.to_f64_vec();
        sorted_ratios.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = values.iter().zip(&sorted_ratios).map(|(p, r)| p - r).collect();
        check_gaps(&gaps, SUM_TOLERANCE)?;
        Ok(Self { values })
    }

    /// Exact validation of rational inputs, stored as `f64` afterwards.
    pub fn from_rationals(mut values: Vec<Rational>, ratios: &AllocationRatios) -> Result<Self> {
        let bad = |msg: String| Err(Error::BiasedProbabilities(msg));
        if values.len() != ratios.arms() {
            return bad(format!("{} values for {} arms", values.len(), ratios.arms()));
        }
        let zero = Rational::from_integer(0);
        let one = Rational::from_integer(1);
        if let Some(v) = values.iter().find(|v| !(**v > zero && **v < one)) {
            return bad(format!("value {v} is not in (0, 1)"));
        }
        let total: Rational = values.iter().copied().sum();
        if total != one {
            return bad(format!("values sum to {total}, not 1"));
        }
        values.sort();
        let mut sorted_ratios = ratios.as_slice().to_vec();
        sorted_ratios.sort();
        let gaps: Vec<Rational> = values.iter().zip(&sorted_ratios).map(|(p, r)| p - r).collect();
        if gaps.windows(2).any(|w| w[1] < w[0]) {
            return bad("p_k − ρ_k must be non-decreasing when both are sorted ascending".into());
        }
        if !(gaps[0] < zero && *gaps.last().unwrap() > zero) {
            return bad("p_1 − ρ_1 < 0 < p_m − ρ_m is violated".into());
        }
        Ok(Self {
            values: values.into_iter().map(to_f64).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn arms(&self) -> usize {
        self.values.len()
    }
}

fn check_gaps(gaps: &[f64], tol: f64) -> Result<()> {
    if gaps.windows(2).any(|w| w[1] < w[0] - tol) {
        return Err(Error::BiasedProbabilities(
            "p_k − ρ_k must be non-decreasing when both are sorted ascending".into(),
        ));
    }
    if !(gaps[0] < 0.0 && *gaps.last().unwrap() > 0.0) {
        return Err(Error::BiasedProbabilities("p_1 − ρ_1 < 0 < p_m − ρ_m is violated".into()));
    }
    Ok(())
}

/// Maps per-arm scores to probabilities: the k-th largest score gets `ascending[k-1]`;
/// arms with equal scores share the mean of the values their ranks span.
pub(crate) fn rank_probabilities<K: PartialOrd + Copy>(scores: &[K], ascending: &[f64]) -> Vec<f64> {
    let m = scores.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("scores are comparable"));
    let mut probs = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let share = if end - start == 1 {
            ascending[start]
        } else {
            ascending[start..end].iter().sum::<f64>() / (end - start) as f64
        };
        for &arm in &order[start..end] {
            probs[arm] = share;
        }
        start = end;
    }
    probs
}

/// Assignment probabilities from potential imbalances (descending-rank convention, ties averaged).
pub fn car_allocation_probs(imbalances: &[f64], biased: &BiasedProbabilities) -> Result<Vec<f64>> {
    if imbalances.len() != biased.arms() {
        return Err(Error::BiasedProbabilities(format!(
            "{} imbalances for {} probabilities",
            imbalances.len(),
            biased.arms()
        )));
    }
    if let Some(i) = imbalances.iter().position(|v| v.is_nan()) {
        return Err(Error::NotANumber(format!("potential imbalance of arm {}", i + 1)));
    }
    Ok(rank_probabilities(imbalances, biased.values()))
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Configuration of a procedure, independent of any particular trial.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcedureSpec {
    CompleteRandomization,
    StratifiedBlocks(BlockSizes),
    Adaptive { weights: CarWeights, biased: BiasedProbabilities },
}

impl ProcedureSpec {
    /// Fresh state for one trial.
    pub fn start(&self, schema: &Arc<CovariateSchema>, ratios: &AllocationRatios) -> Result<ProcedureState> {
        Ok(match self {
            ProcedureSpec::CompleteRandomization => ProcedureState::Cr(ratios.clone()),
            ProcedureSpec::StratifiedBlocks(sizes) => {
                ProcedureState::StrPb(StrPbState::new(schema.clone(), ratios.clone(), sizes.clone()))
            }
            ProcedureSpec::Adaptive { weights, biased } => ProcedureState::Car(Box::new(CarState::new(
                schema.clone(),
                ratios.clone(),
                weights.clone(),
                biased.clone(),
            )?)),
        })
    }

    /// True when the procedure keeps within-stratum imbalance bounded in probability:
    /// stratified blocks, or adaptive weighting with `w_s > 0`.
    pub fn balances_strata(&self) -> bool {
        match self {
            ProcedureSpec::CompleteRandomization => false,
            ProcedureSpec::StratifiedBlocks(_) => true,
            ProcedureSpec::Adaptive { weights, .. } => weights.stratum() > Rational::from_integer(0),
        }
    }
}

/// Per-trial mutable state of one procedure.
#[derive(Debug, Clone)]
pub enum ProcedureState {
    Cr(AllocationRatios),
    StrPb(StrPbState),
    Car(Box<CarState>),
}

impl ProcedureState {
    pub fn assign<R: Rng + ?Sized>(&mut self, profile: &BlindedProfile<'_>, rng: &mut R) -> Result<usize> {
        match self {
            ProcedureState::Cr(ratios) => Ok(assign_cr(ratios, rng)),
            ProcedureState::StrPb(state) => Ok(state.assign(profile, rng)),
            ProcedureState::Car(state) => state.assign(profile, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study_ratios() -> AllocationRatios {
        AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap()
    }

    #[test]
    fn biased_probabilities_validation() {
        let r = study_ratios();
        let b = BiasedProbabilities::new(vec![0.78, 0.02, 0.2], &r).unwrap();
        assert_eq!(b.values(), &[0.02, 0.2, 0.78]);
        assert!(BiasedProbabilities::new(vec![0.02, 0.2], &r).is_err());
        assert!(BiasedProbabilities::new(vec![0.0, 0.2, 0.8], &r).is_err());
        assert!(BiasedProbabilities::new(vec![0.1, 0.2, 0.78], &r).is_err());
        // gaps (-0.1, 0.1, 0.0) are not non-decreasing
        assert!(BiasedProbabilities::new(vec![0.1, 0.4, 0.5], &r).is_err());
        // equal to the ratios: no correction, first gap is not negative
        assert!(BiasedProbabilities::new(vec![0.2, 0.3, 0.5], &r).is_err());

        let exact = BiasedProbabilities::from_rationals(
            vec![Rational::new(1, 50), Rational::new(1, 5), Rational::new(39, 50)],
            &r,
        )
        .unwrap();
        assert_eq!(exact, b);
        assert!(BiasedProbabilities::from_rationals(
            vec![Rational::new(1, 5), Rational::new(3, 10), Rational::new(1, 2)],
            &r
        )
        .is_err());
    }

    #[test]
    fn allocation_probs_examples() {
        let b = BiasedProbabilities::new(vec![0.02, 0.2, 0.78], &study_ratios()).unwrap();
        let p = car_allocation_probs(&[0.863, 0.573, 0.893], &b).unwrap();
        assert_eq!(p, vec![0.2, 0.78, 0.02]);

        let p = car_allocation_probs(&[1.0, 1.0, 1.0], &b).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let p = car_allocation_probs(&[5.0, 1.0, 1.0], &b).unwrap();
        assert_eq!(p[0], 0.02);
        assert!((p[1] - 0.49).abs() < 1e-15 && (p[2] - 0.49).abs() < 1e-15);

        assert!(car_allocation_probs(&[f64::NAN, 1.0, 2.0], &b).is_err());
        assert!(car_allocation_probs(&[1.0, 2.0], &b).is_err());
    }

    #[test]
    fn sampling_falls_back_to_last_positive_mass() {
        struct Max;
        impl rand::RngCore for Max {
            fn next_u32(&mut self) -> u32 {
                u32::MAX
            }
            fn next_u64(&mut self) -> u64 {
                u64::MAX
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                dst.fill(0xff)
            }
        }
        assert_eq!(sample_index(&[0.5, 0.5 - 1e-17, 0.0], &mut Max), 1);
    }
}
