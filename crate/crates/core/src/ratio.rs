//! Exact rational numbers and validated allocation ratio vectors.

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational with `i64` parts, always in lowest terms with a positive denominator.
pub type Rational = Ratio<i64>;

/// Shorthand constructor; panics on a zero denominator.
pub fn rational(numer: i64, denom: i64) -> Rational {
    Rational::new(numer, denom)
}

/// Parses `"3/10"`, `"-2"`, or a plain decimal such as `"0.125"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let text = text.trim();
    let bad = || Error::Ratios(format!("cannot parse {text:?} as a rational"));
    if let Some((num, den)) = text.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(Error::Ratios(format!("zero denominator in {text:?}")));
        }
        return Ok(Rational::new(num, den));
    }
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if (int_part.is_empty() && frac_part.is_empty())
        || !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
        || frac_part.len() > 15
    {
        return Err(bad());
    }
    let scale = 10i64.pow(frac_part.len() as u32);
    let int_value: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let frac_value: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    let numer = int_value
        .checked_mul(scale)
        .and_then(|v| v.checked_add(frac_value))
        .ok_or_else(bad)?;
    let value = Rational::new(numer, scale);
    Ok(if negative { -value } else { value })
}

pub fn to_f64(value: Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Target allocation proportions ρ over `m` arms: non-negative rationals summing to exactly 1.
///
/// Besides the rationals themselves the vector caches a common denominator `Q` and the
/// numerators `R_g = Q·ρ_g`, so imbalances can be carried as exact integers `Q·D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationRatios {
    ratios: Vec<Rational>,
    common_denom: i64,
    scaled: Vec<i64>,
}

impl AllocationRatios {
    pub fn new(ratios: Vec<Rational>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::Ratios("at least one arm is required".into()));
        }
        if let Some(r) = ratios.iter().find(|r| **r < Rational::zero()) {
            return Err(Error::Ratios(format!("negative ratio {r}")));
        }
        let total: Rational = ratios.iter().copied().sum();
        if total != Rational::from_integer(1) {
            return Err(Error::Ratios(format!("ratios sum to {total}, not 1")));
        }
        let common_denom = ratios.iter().fold(1i64, |acc, r| acc.lcm(r.denom()));
        let scaled = ratios
            .iter()
            .map(|r| r.numer() * (common_denom / r.denom()))
            .collect();
        Ok(Self {
            ratios,
            common_denom,
            scaled,
        })
    }

    pub fn parse<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        let ratios = texts
            .iter()
            .map(|t| parse_rational(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ratios)
    }

    /// Equal allocation over `arms` arms.
    pub fn equal(arms: usize) -> Result<Self> {
        Self::new(vec![Rational::new(1, arms as i64); arms])
    }

    pub fn arms(&self) -> usize {
        self.ratios.len()
    }

    pub fn as_slice(&self) -> &[Rational] {
        &self.ratios
    }

    pub fn get(&self, arm: usize) -> Rational {
        self.ratios[arm]
    }

    pub fn get_f64(&self, arm: usize) -> f64 {
        to_f64(self.ratios[arm])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.ratios.iter().map(|r| to_f64(*r)).collect()
    }

    /// `Q = lcm` of the reduced denominators; defined even when some ratio is zero.
    pub fn common_denominator(&self) -> i64 {
        self.common_denom
    }

    /// `Q·ρ_g` for every arm.
    pub fn scaled_numerators(&self) -> &[i64] {
        &self.scaled
    }

    /// Return period of the imbalance chain: the lcm of reduced denominators.
    ///
    /// Requires every ratio to be strictly positive.
    pub fn period(&self) -> Result<u64> {
        if let Some(g) = self.ratios.iter().position(|r| r.is_zero()) {
            return Err(Error::Ratios(format!("arm {} has a zero ratio", g + 1)));
        }
        Ok(self.common_denom as u64)
    }
}

/// Free-function form of [`AllocationRatios::period`].
pub fn period(ratios: &AllocationRatios) -> Result<u64> {
    ratios.period()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratios(texts: &[&str]) -> AllocationRatios {
        AllocationRatios::parse(texts).unwrap()
    }

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("3/10").unwrap(), rational(3, 10));
        assert_eq!(parse_rational("0.125").unwrap(), rational(1, 8));
        assert_eq!(parse_rational("-0.5").unwrap(), rational(-1, 2));
        assert_eq!(parse_rational(" 2 ").unwrap(), rational(2, 1));
        assert_eq!(parse_rational(".25").unwrap(), rational(1, 4));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1e-3").is_err());
    }

    #[test]
    fn period_is_lcm_of_denominators() {
        assert_eq!(ratios(&["1/5", "3/10", "1/2"]).period().unwrap(), 10);
        assert_eq!(ratios(&["1/3", "1/3", "1/3"]).period().unwrap(), 3);
        assert_eq!(ratios(&["1/2", "1/2"]).period().unwrap(), 2);
        assert_eq!(ratios(&["0.2", "0.3", "0.5"]).period().unwrap(), 10);
    }

    #[test]
    fn rejects_bad_ratio_vectors() {
        assert!(AllocationRatios::parse(&["1/2", "1/3"]).is_err());
        assert!(AllocationRatios::parse(&["3/2", "-1/2"]).is_err());
        let degenerate = ratios(&["1", "0"]);
        assert!(degenerate.period().is_err());
        assert_eq!(degenerate.common_denominator(), 1);
    }

    #[test]
    fn scaled_numerators_match_common_denominator() {
        let r = ratios(&["1/5", "3/10", "1/2"]);
        assert_eq!(r.common_denominator(), 10);
        assert_eq!(r.scaled_numerators(), &[2, 3, 5]);
    }
}
