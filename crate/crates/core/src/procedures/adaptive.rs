//! Weighted covariate-adaptive randomization (minimization) for unequal allocation ratios.
//!
//! For each candidate arm `t` the procedure forms the potential imbalances
//! `D^{(t)}_g = D_g + 1{g=t} − ρ_g` over the overall scope, each observed margin of the
//! incoming patient, and the patient's stratum, and scores
//!
//! ```text
//! Imb(t) = w_o Σ_g D^{(t)}_g² + Σ_k w_{m,k} Σ_g D^{(t)}_g(k)² + w_s Σ_g D^{(t)}_g(s)²
//! ```
//!
//! Arms are ranked by `Imb(t)`; the largest score gets the smallest configured probability.
//! Since `Imb(t) − Imb(t') = 2[(Λ_t − ρ_t) − (Λ_{t'} − ρ_{t'})]` with
//! `Λ_t = w_o D_t + Σ_k w_{m,k} D_t(k) + w_s D_t(s)`, the ranking is computed on exact integer
//! multiples of `Λ_t − ρ_t` and never depends on floating-point rounding.

use std::sync::Arc;

use num_integer::Integer;
use num_traits::Zero;
use rand::Rng;

use super::cr::assign_cr;
use super::BiasedProbabilities;
use crate::error::{Error, Result};
use crate::ledger::{ObservedLedger, Scope};
use crate::ratio::{parse_rational, to_f64, AllocationRatios, Rational};
use crate::schema::{BlindedProfile, CovariateSchema};

/// Imbalance weights `(w_o, w_{m,1..p}, w_s)`: non-negative, summing to exactly 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarWeights {
    overall: Rational,
    margins: Vec<Rational>,
    stratum: Rational,
    denom: i64,
}

impl CarWeights {
    pub fn new(overall: Rational, margins: Vec<Rational>, stratum: Rational) -> Result<Self> {
        let all = std::iter::once(overall).chain(margins.iter().copied()).chain([stratum]);
        let mut total = Rational::zero();
        for w in all.clone() {
            if w < Rational::zero() {
                return Err(Error::Weights(format!("negative weight {w}")));
            }
            total += w;
        }
        if total != Rational::from_integer(1) {
            return Err(Error::Weights(format!(
                "w_o + Σ w_{{m,k}} + w_s = 1 is violated: weights sum to {total} ({:.6})",
                to_f64(total)
            )));
        }
        let denom = all.fold(1i64, |acc, w| acc.lcm(w.denom()));
        Ok(Self {
            overall,
            margins,
            stratum,
            denom,
        })
    }

    pub fn parse<S: AsRef<str>>(overall: &str, margins: &[S], stratum: &str) -> Result<Self> {
        let margins = margins
            .iter()
            .map(|m| parse_rational(m.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Weights(e.to_string()))?;
        let p = |t: &str| parse_rational(t).map_err(|e| Error::Weights(e.to_string()));
        Self::new(p(overall)?, margins, p(stratum)?)
    }

    /// Marginal-only weighting (`w_o = w_s = 0`, equal margin weights): Pocock–Simon.
    pub fn pocock_simon(covariates: usize) -> Result<Self> {
        Self::new(
            Rational::zero(),
            vec![Rational::new(1, covariates as i64); covariates],
            Rational::zero(),
        )
    }

    /// Overall-only weighting (`w_o = 1`): Efron-style biased coin.
    pub fn efron(covariates: usize) -> Result<Self> {
        Self::new(Rational::from_integer(1), vec![Rational::zero(); covariates], Rational::zero())
    }

    pub fn overall(&self) -> Rational {
        self.overall
    }

    pub fn margins(&self) -> &[Rational] {
        &self.margins
    }

    pub fn stratum(&self) -> Rational {
        self.stratum
    }

    fn scaled(&self, w: Rational) -> i128 {
        (w.numer() * (self.denom / w.denom())) as i128
    }
}

/// State of one covariate-adaptive allocation sequence.
#[derive(Debug, Clone)]
pub struct CarState {
    ledger: ObservedLedger,
    weights: CarWeights,
    biased: BiasedProbabilities,
    scaled_overall: i128,
    scaled_margins: Vec<i128>,
    scaled_stratum: i128,
}

impl CarState {
    pub fn new(
        schema: Arc<CovariateSchema>,
        ratios: AllocationRatios,
        weights: CarWeights,
        biased: BiasedProbabilities,
    ) -> Result<Self> {
        if weights.margins.len() != schema.observed().len() {
            return Err(Error::Weights(format!(
                "{} margin weights for {} observed covariates",
                weights.margins.len(),
                schema.observed().len()
            )));
        }
        if biased.arms() != ratios.arms() {
            return Err(Error::BiasedProbabilities(format!(
                "{} probabilities for {} arms",
                biased.arms(),
                ratios.arms()
            )));
        }
        Ok(Self {
            scaled_overall: weights.scaled(weights.overall),
            scaled_margins: weights.margins.iter().map(|w| weights.scaled(*w)).collect(),
            scaled_stratum: weights.scaled(weights.stratum),
            ledger: ObservedLedger::new(schema, ratios),
            weights,
            biased,
        })
    }

    pub fn ledger(&self) -> &ObservedLedger {
        &self.ledger
    }

    pub fn weights(&self) -> &CarWeights {
        &self.weights
    }

    pub fn biased(&self) -> &BiasedProbabilities {
        &self.biased
    }

    fn scopes<'a>(&self, profile: &'a BlindedProfile<'_>) -> impl Iterator<Item = Scope> + 'a {
        std::iter::once(Scope::Overall)
            .chain(
                profile
                    .levels()
                    .iter()
                    .enumerate()
                    .map(|(covariate, &level)| Scope::ObsMargin { covariate, level }),
            )
            .chain([Scope::ObsStratum(profile.stratum())])
    }

    fn check_profile(&self, profile: &BlindedProfile<'_>) -> Result<()> {
        if profile.levels().len() != self.scaled_margins.len() {
            return Err(Error::Profile(format!(
                "profile has {} observed levels, schema has {}",
                profile.levels().len(),
                self.scaled_margins.len()
            )));
        }
        Ok(())
    }

    /// `Imb^{(t)}` for the incoming patient; the ledger is not mutated.
    pub fn potential_imbalance(&self, profile: &BlindedProfile<'_>, arm: usize) -> Result<f64> {
        let arms = self.ledger.arms();
        if arm >= arms {
            return Err(Error::ArmOutOfRange { arm, arms });
        }
        self.check_profile(profile)?;
        let ratios = self.ledger.ratios();
        let q = ratios.common_denominator();
        let weights = std::iter::once(self.weights.overall)
            .chain(self.weights.margins.iter().copied())
            .chain([self.weights.stratum]);
        let mut total = 0.0;
        for (scope, w) in self.scopes(profile).zip(weights) {
            if w.is_zero() {
                continue;
            }
            let mut squares = 0.0;
            for g in 0..arms {
                let hit = if g == arm { q } else { 0 };
                let scaled = self.ledger.scaled_imbalance(&scope, g) + hit - ratios.scaled_numerators()[g];
                let d = scaled as f64 / q as f64;
                squares += d * d;
            }
            total += to_f64(w) * squares;
        }
        Ok(total)
    }

    pub fn potential_imbalances(&self, profile: &BlindedProfile<'_>) -> Result<Vec<f64>> {
        (0..self.ledger.arms())
            .map(|t| self.potential_imbalance(profile, t))
            .collect()
    }

    /// Exact integer keys `Q·W·(Λ_t − ρ_t)`, ordered like `Imb^{(t)}`.
    pub fn ranking_keys(&self, profile: &BlindedProfile<'_>) -> Vec<i128> {
        let ratios = self.ledger.ratios();
        let w_total = self.weights.denom as i128;
        let mut keys: Vec<i128> = ratios
            .scaled_numerators()
            .iter()
            .map(|&r| -(r as i128) * w_total)
            .collect();
        let scaled_weights = std::iter::once(self.scaled_overall)
            .chain(self.scaled_margins.iter().copied())
            .chain([self.scaled_stratum]);
        for (scope, w) in self.scopes(profile).zip(scaled_weights) {
            if w == 0 {
                continue;
            }
            for (g, key) in keys.iter_mut().enumerate() {
                *key += w * self.ledger.scaled_imbalance(&scope, g) as i128;
            }
        }
        keys
    }

    /// Assignment probabilities for the incoming patient (after the first patient).
    pub fn allocation_probs(&self, profile: &BlindedProfile<'_>) -> Vec<f64> {
        let keys = self.ranking_keys(profile);
        super::rank_probabilities(&keys, self.biased.values())
    }

    pub fn assign<R: Rng + ?Sized>(&mut self, profile: &BlindedProfile<'_>, rng: &mut R) -> Result<usize> {
        self.check_profile(profile)?;
        let arm = if self.ledger.n() == 0 {
            assign_cr(self.ledger.ratios(), rng)
        } else {
            let probs = self.allocation_probs(profile);
            super::sample_index(&probs, rng)
        };
        self.ledger.record(profile, arm)?;
        Ok(arm)
    }
}
