use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use covbal_core::ledger::{AllocationLedger, Scope};
use covbal_core::procedures::{
    assign_cr, car_allocation_probs, BiasedProbabilities, BlockSizes, CarState, CarWeights, ProcedureSpec,
    StrPbState,
};
use covbal_core::ratio::rational;
use covbal_core::schema::build_schema;
use covbal_core::{AllocationRatios, CovariateSchema, Level, PatientProfile, Rational, StratumId};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn study_ratios() -> AllocationRatios {
    AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap()
}

fn study_biased(ratios: &AllocationRatios) -> BiasedProbabilities {
    BiasedProbabilities::from_rationals(vec![rational(1, 50), rational(1, 5), rational(39, 50)], ratios).unwrap()
}

fn schema() -> Arc<CovariateSchema> {
    Arc::new(build_schema(&[("X1", 2), ("X2", 3), ("X3", 2)], &[("U1", 2), ("U2", 2)]).unwrap())
}

fn random_profile(schema: &CovariateSchema, rng: &mut ChaCha8Rng) -> PatientProfile {
    let x: Vec<Level> = schema.observed().iter().map(|c| rng.random_range(1..=c.levels)).collect();
    let u: Vec<Level> = schema.unobserved().iter().map(|c| rng.random_range(1..=c.levels)).collect();
    schema.profile(x, u).unwrap()
}

fn multiset_permutations(counts: &mut [u32], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if counts.iter().all(|&c| c == 0) {
        out.push(prefix.clone());
        return;
    }
    for arm in 0..counts.len() {
        if counts[arm] > 0 {
            counts[arm] -= 1;
            prefix.push(arm);
            multiset_permutations(counts, prefix, out);
            prefix.pop();
            counts[arm] += 1;
        }
    }
}

#[test]
fn str_pb_covers_every_block_arrangement_uniformly() {
    let ratios = study_ratios();
    let schema = Arc::new(build_schema(&[("X1", 2)], &[]).unwrap());
    let sizes = BlockSizes::from_size(&ratios, 10).unwrap();
    let profile = schema.profile(vec![1], vec![]).unwrap();

    let mut all = Vec::new();
    multiset_permutations(&mut [2, 3, 5], &mut Vec::new(), &mut all);
    assert_eq!(all.len(), 2520);
    for arrangement in &all {
        let mut ledger = AllocationLedger::new(schema.clone(), ratios.clone());
        for &arm in arrangement {
            ledger.record_assignment(&profile, arm).unwrap();
        }
        for g in 0..3 {
            assert_eq!(ledger.imbalance(&Scope::ObsStratum(StratumId(0)), g), Rational::from_integer(0));
        }
    }
    let universe: HashSet<Vec<usize>> = all.into_iter().collect();

    let draws = 2520 * 40;
    let mut counts: HashMap<Vec<usize>, u32> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2520);
    for _ in 0..draws {
        let mut state = StrPbState::new(schema.clone(), ratios.clone(), sizes.clone());
        let seq: Vec<usize> = (0..10).map(|_| state.assign(&profile.blinded(), &mut rng)).collect();
        assert!(universe.contains(&seq), "{seq:?} is not a valid block");
        *counts.entry(seq).or_default() += 1;
    }
    assert_eq!(counts.len(), 2520, "some arrangements never appeared");
    let expected = draws as f64 / 2520.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df: f64 = 2519.0;
    assert!(chi2 < df + 6.0 * (2.0 * df).sqrt(), "chi-square {chi2} too large for uniform blocks");
}

#[test]
fn str_pb_stratum_imbalance_vanishes_at_block_boundaries() {
    let schema = schema();
    let ratios = study_ratios();
    for (size, override_size) in [(10, 20), (20, 30)] {
        let sizes = BlockSizes::from_size(&ratios, size)
            .unwrap()
            .with_override(&ratios, StratumId(3), override_size)
            .unwrap();
        let spec = ProcedureSpec::StratifiedBlocks(sizes.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        let mut state = spec.start(&schema, &ratios).unwrap();
        let mut ledger = AllocationLedger::new(schema.clone(), ratios.clone());
        let mut boundaries = 0;
        for _ in 0..20_000 {
            let p = random_profile(&schema, &mut rng);
            let arm = state.assign(&p.blinded(), &mut rng).unwrap();
            ledger.record_assignment(&p, arm).unwrap();
            let s = p.observed_stratum();
            let scope = Scope::ObsStratum(s);
            let seen = ledger.scope_count(&scope);
            if seen % sizes.size(s) as u64 == 0 {
                boundaries += 1;
                for g in 0..3 {
                    assert_eq!(ledger.imbalance(&scope, g), Rational::from_integer(0));
                }
            }
            for g in 0..3 {
                let d = ledger.imbalance(&scope, g);
                let bound = Rational::from_integer(sizes.size(s) as i64);
                assert!(d <= bound && -d <= bound);
            }
        }
        assert!(boundaries > 500);
    }
}

fn naive_imbalance(
    history: &[(Vec<Level>, usize)],
    ratios: &AllocationRatios,
    weights: &CarWeights,
    levels: &[Level],
    arm: usize,
) -> Rational {
    let m = ratios.arms();
    let score = |matches: &dyn Fn(&[Level]) -> bool| -> Rational {
        let mut counts = vec![0i64; m];
        let mut total = 0i64;
        for (x, a) in history {
            if matches(x) {
                counts[*a] += 1;
                total += 1;
            }
        }
        counts[arm] += 1;
        total += 1;
        (0..m)
            .map(|g| {
                let d = Rational::from_integer(counts[g]) - ratios.get(g) * total;
                d * d
            })
            .sum()
    };
    let mut imb = weights.overall() * score(&|_| true);
    for (k, w) in weights.margins().iter().enumerate() {
        imb += *w * score(&|x: &[Level]| x[k] == levels[k]);
    }
    imb + weights.stratum() * score(&|x: &[Level]| x == levels)
}

fn tie_averaged(imbalances: &[Rational], ascending: &[f64]) -> Vec<f64> {
    let m = imbalances.len();
    (0..m)
        .map(|a| {
            let above = imbalances.iter().filter(|v| **v > imbalances[a]).count();
            let equal = imbalances.iter().filter(|v| **v == imbalances[a]).count();
            ascending[above..above + equal].iter().sum::<f64>() / equal as f64
        })
        .collect()
}

fn weight_sets(covariates: usize) -> Vec<CarWeights> {
    let even = |total: i64, denom: i64| vec![rational(total, denom * covariates as i64); covariates];
    vec![
        CarWeights::pocock_simon(covariates).unwrap(),
        CarWeights::new(rational(1, 3), even(1, 3), rational(1, 3)).unwrap(),
        CarWeights::new(rational(1, 5), even(1, 2), rational(3, 10)).unwrap(),
        CarWeights::new(rational(0, 1), vec![rational(0, 1); covariates], rational(1, 1)).unwrap(),
        CarWeights::efron(covariates).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn car_probabilities_are_tie_averaged_and_corrective(seed in any::<u64>(), len in 1usize..120, which in 0usize..5) {
        let schema = schema();
        let ratios = study_ratios();
        let biased = study_biased(&ratios);
        let weights = weight_sets(schema.observed().len()).swap_remove(which);
        let mut state = CarState::new(schema.clone(), ratios.clone(), weights.clone(), biased.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut history: Vec<(Vec<Level>, usize)> = Vec::new();
        for _ in 0..len {
            let p = random_profile(&schema, &mut rng);
            let blinded = p.blinded();
            if !history.is_empty() {
                let exact: Vec<Rational> = (0..3)
                    .map(|t| naive_imbalance(&history, &ratios, &weights, blinded.levels(), t))
                    .collect();
                let floats = state.potential_imbalances(&blinded).unwrap();
                for (f, e) in floats.iter().zip(&exact) {
                    prop_assert!((f - covbal_core::ratio::to_f64(*e)).abs() < 1e-9);
                }
                let probs = state.allocation_probs(&blinded);
                let expected = tie_averaged(&exact, biased.values());
                for (p, e) in probs.iter().zip(&expected) {
                    prop_assert!((p - e).abs() < 1e-12, "{probs:?} vs {expected:?}");
                }
                let mut sorted = probs.clone();
                sorted.sort_by(f64::total_cmp);
                let sum: f64 = sorted.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                let distinct: HashSet<Rational> = exact.iter().copied().collect();
                if distinct.len() == 3 {
                    for (p, v) in sorted.iter().zip(biased.values()) {
                        prop_assert!((p - v).abs() < 1e-15);
                    }
                }
                for a in 0..3 {
                    for b in 0..3 {
                        if exact[a] > exact[b] {
                            prop_assert!(probs[a] <= probs[b]);
                        }
                    }
                }
                let via_floats = car_allocation_probs(&floats, &biased).unwrap();
                if distinct.len() == 3 {
                    prop_assert_eq!(via_floats, probs);
                }
            }
            let arm = state.assign(&blinded, &mut rng).unwrap();
            history.push((blinded.levels().to_vec(), arm));
        }
    }
}

#[test]
fn pocock_simon_depends_on_margins_only() {
    let schema = schema();
    let ratios = study_ratios();
    let biased = study_biased(&ratios);
    let weights = CarWeights::pocock_simon(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..200 {
        let mut history: Vec<(Vec<Level>, usize)> = Vec::new();
        let mut state = CarState::new(schema.clone(), ratios.clone(), weights.clone(), biased.clone()).unwrap();
        for _ in 0..rng.random_range(1..60) {
            let p = random_profile(&schema, &mut rng);
            let arm = state.assign(&p.blinded(), &mut rng).unwrap();
            history.push((p.observed_levels().to_vec(), arm));
        }
        let p = random_profile(&schema, &mut rng);
        let keys = state.ranking_keys(&p.blinded());
        let margin_only: Vec<Rational> = (0..3)
            .map(|t| {
                let mut total = Rational::from_integer(0);
                for (k, &level) in p.observed_levels().iter().enumerate() {
                    let mut counts = [0i64; 3];
                    let mut n = 0i64;
                    for (x, a) in &history {
                        if x[k] == level {
                            counts[*a] += 1;
                            n += 1;
                        }
                    }
                    counts[t] += 1;
                    n += 1;
                    for (g, &c) in counts.iter().enumerate() {
                        let d = Rational::from_integer(c) - ratios.get(g) * n;
                        total += d * d;
                    }
                }
                total / 3
            })
            .collect();
        let floats = state.potential_imbalances(&p.blinded()).unwrap();
        for t in 0..3 {
            assert!((floats[t] - covbal_core::ratio::to_f64(margin_only[t])).abs() < 1e-9);
            for u in 0..3 {
                assert_eq!(keys[t].cmp(&keys[u]), margin_only[t].cmp(&margin_only[u]));
            }
        }
    }
}

fn assignments(spec: &ProcedureSpec, schema: &Arc<CovariateSchema>, ratios: &AllocationRatios, patients: &[PatientProfile], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = spec.start(schema, ratios).unwrap();
    patients.iter().map(|p| state.assign(&p.blinded(), &mut rng).unwrap()).collect()
}

#[test]
fn permuting_unobserved_values_changes_nothing() {
    let schema = schema();
    let ratios = study_ratios();
    let biased = study_biased(&ratios);
    let specs = [
        ProcedureSpec::CompleteRandomization,
        ProcedureSpec::StratifiedBlocks(BlockSizes::from_size(&ratios, 10).unwrap()),
        ProcedureSpec::Adaptive { weights: CarWeights::pocock_simon(3).unwrap(), biased: biased.clone() },
        ProcedureSpec::Adaptive {
            weights: CarWeights::new(rational(1, 5), vec![rational(1, 6); 3], rational(3, 10)).unwrap(),
            biased,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for trial in 0..50u64 {
        let patients: Vec<PatientProfile> = (0..300).map(|_| random_profile(&schema, &mut rng)).collect();
        let mut unobserved: Vec<Vec<Level>> = patients.iter().map(|p| p.unobserved_levels().to_vec()).collect();
        unobserved.shuffle(&mut rng);
        for u in unobserved.iter_mut().step_by(3) {
            for (l, c) in u.iter_mut().zip(schema.unobserved()) {
                *l = rng.random_range(1..=c.levels);
            }
        }
        let scrambled: Vec<PatientProfile> = patients
            .iter()
            .zip(unobserved)
            .map(|(p, u)| schema.profile(p.observed_levels().to_vec(), u).unwrap())
            .collect();
        for spec in &specs {
            assert_eq!(
                assignments(spec, &schema, &ratios, &patients, trial),
                assignments(spec, &schema, &ratios, &scrambled, trial)
            );
        }
    }
}

#[test]
fn complete_randomization_matches_brute_force_enumeration() {
    let ratios = AllocationRatios::parse(&["1/5", "4/5"]).unwrap();
    let schema = Arc::new(build_schema(&[("X1", 2)], &[("U1", 2)]).unwrap());
    let patients: Vec<PatientProfile> = [(1, 1), (2, 2), (1, 2), (2, 1)]
        .iter()
        .map(|&(x, u)| schema.profile(vec![x], vec![u]).unwrap())
        .collect();
    let rho = ratios.get(0);
    let mut exact = HashMap::new();
    let mut second_moment = Rational::from_integer(0);
    for outcome in 0u32..16 {
        let arms: Vec<usize> = (0..4).map(|i| ((outcome >> i) & 1) as usize).collect();
        let mut prob = Rational::from_integer(1);
        let mut ledger = AllocationLedger::new(schema.clone(), ratios.clone());
        for (p, &a) in patients.iter().zip(&arms) {
            prob *= ratios.get(a);
            ledger.record_assignment(p, a).unwrap();
        }
        let d = ledger.imbalance(&Scope::Overall, 0);
        second_moment += prob * d * d;
        exact.insert(arms, prob);
    }
    let total: Rational = exact.values().copied().sum();
    assert_eq!(total, Rational::from_integer(1));
    assert_eq!(second_moment, rho * (Rational::from_integer(1) - rho) * 4);

    let trials = 200_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut freq: HashMap<Vec<usize>, u32> = HashMap::new();
    for t in 0..trials {
        let seq = if t % 2 == 0 {
            (0..4).map(|_| assign_cr(&ratios, &mut rng)).collect()
        } else {
            let mut state = ProcedureSpec::CompleteRandomization.start(&schema, &ratios).unwrap();
            patients.iter().map(|p| state.assign(&p.blinded(), &mut rng).unwrap()).collect()
        };
        *freq.entry(seq).or_default() += 1;
    }
    assert_eq!(freq.len(), 16);
    for (arms, prob) in &exact {
        let p = covbal_core::ratio::to_f64(*prob);
        let observed = freq[arms] as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((observed - p).abs() < 4.0 * se, "{arms:?}: {observed} vs {p}");
    }

    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = ChaCha8Rng::seed_from_u64(5);
    let direct: Vec<usize> = (0..4).map(|_| assign_cr(&ratios, &mut a)).collect();
    let mut state = ProcedureSpec::CompleteRandomization.start(&schema, &ratios).unwrap();
    let via_state: Vec<usize> = patients.iter().map(|p| state.assign(&p.blinded(), &mut b).unwrap()).collect();
    assert_eq!(direct, via_state);
}
