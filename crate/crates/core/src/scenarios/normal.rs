use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF, `Φ(z) = erfc(−z/√2)/2`.
///
/// Evaluated through the complementary error function so both tails keep full relative
/// precision.
pub fn normal_cdf(z: f64) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::NotANumber("normal CDF argument".into()));
    }
    Ok(0.5 * erfc(-z / std::f64::consts::SQRT_2))
}
