use rand::Rng;

use crate::ratio::AllocationRatios;

/// Complete randomization: arm `g` with probability `ρ_g`, ignoring covariates and history.
///
/// Draws an integer uniformly from `0..Q` and walks the scaled numerators, so the
/// assignment probabilities are exactly the rationals.
pub fn assign_cr<R: Rng + ?Sized>(ratios: &AllocationRatios, rng: &mut R) -> usize {
    let q = ratios.common_denominator() as u64;
    let mut draw = rng.random_range(0..q) as i64;
    let scaled = ratios.scaled_numerators();
    for (arm, &r) in scaled.iter().enumerate() {
        if draw < r {
            return arm;
        }
        draw -= r;
    }
    unreachable!("scaled numerators sum to the common denominator")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_ratio_always_first_arm() {
        let ratios = AllocationRatios::parse(&["1", "0"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| assign_cr(&ratios, &mut rng) == 0));
    }

    #[test]
    fn frequencies_within_three_standard_errors() {
        let ratios = AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000;
        let mut counts = [0u64; 3];
        for _ in 0..draws {
            counts[assign_cr(&ratios, &mut rng)] += 1;
        }
        for (g, &p) in [0.2, 0.3, 0.5].iter().enumerate() {
            let freq = counts[g] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "arm {g}: {freq} vs {p}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let ratios = AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| assign_cr(&ratios, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }
}
