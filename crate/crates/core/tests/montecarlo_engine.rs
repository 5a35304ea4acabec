use std::sync::Arc;

use covbal_core::ledger::Scope;
use covbal_core::montecarlo::{
    estimate_gamma, run_replicates, run_study, summarize, write_summaries_csv, GammaConfig, GammaTrend, Metric,
    NamedProcedure, StudyConfig, SUMMARY_COLUMNS,
};
use covbal_core::procedures::{BiasedProbabilities, BlockSizes, CarWeights, ProcedureSpec};
use covbal_core::scenarios::{delta_model, Scenario};
use covbal_core::theory::tau_cr_sq;
use covbal_core::{AllocationRatios, Rational, StratumId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scenario(delta: Rational) -> Arc<Scenario> {
    Arc::new(Scenario::with_default_split(Arc::new(delta_model(delta).unwrap())).unwrap())
}

fn ratios() -> AllocationRatios {
    AllocationRatios::parse(&["1/5", "3/10", "1/2"]).unwrap()
}

fn procedures(r: &AllocationRatios) -> Vec<NamedProcedure> {
    let biased = BiasedProbabilities::new(vec![0.02, 0.2, 0.78], r).unwrap();
    vec![
        NamedProcedure::new("CR", ProcedureSpec::CompleteRandomization),
        NamedProcedure::new("STR-PB", ProcedureSpec::StratifiedBlocks(BlockSizes::from_size(r, 10).unwrap())),
        NamedProcedure::new(
            "PS",
            ProcedureSpec::Adaptive { weights: CarWeights::pocock_simon(2).unwrap(), biased: biased.clone() },
        ),
        NamedProcedure::new(
            "MCAR",
            ProcedureSpec::Adaptive { weights: CarWeights::parse("0.2", &["0.25", "0.25"], "0.3").unwrap(), biased },
        ),
    ]
}

fn metrics() -> Vec<Metric> {
    vec![
        Metric::new(Scope::UnobsMargin { covariate: 0, level: 2 }, 0),
        Metric::new(Scope::JointStratumMargin { stratum: StratumId(0), covariate: 0, level: 1 }, 1),
        Metric::new(Scope::Overall, 2),
    ]
}

#[test]
fn complete_randomization_sd_matches_tau_cr() {
    let sc = scenario(Rational::new(1, 16));
    let r = ratios();
    let config = StudyConfig {
        scenario: sc.clone(),
        ratios: r.clone(),
        procedures: vec![NamedProcedure::new("CR", ProcedureSpec::CompleteRandomization)],
        n: 200,
        replicates: 4000,
        seed: 200,
        metrics: metrics(),
        threads: None,
    };
    let summary = run_study(&config).unwrap();
    let pmf = sc.joint().unwrap();
    for (row, m) in summary.rows.iter().zip(metrics()) {
        let tau = tau_cr_sq(&pmf, r.get_f64(m.arm), &m.scope).map(f64::sqrt);
        let expected = match m.scope {
            Scope::Overall => (r.get_f64(m.arm) * (1.0 - r.get_f64(m.arm))).sqrt(),
            _ => tau.unwrap(),
        };
        let sd = row.sd.unwrap();
        assert!((sd - expected).abs() < 3.0 * row.se_sd.unwrap(), "{}: {sd} vs {expected}", row.metric);
        assert!(row.mean.abs() < 4.0 * row.se_mean.unwrap());
        if !matches!(m.scope, Scope::Overall) {
            assert_eq!(row.theory_ref.as_deref(), Some("tau_cr"));
            assert!((row.theory_value.unwrap() - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn results_are_bitwise_identical_across_thread_counts() {
    let r = ratios();
    let base = StudyConfig {
        scenario: scenario(Rational::new(0, 1)),
        ratios: r.clone(),
        procedures: procedures(&r),
        n: 120,
        replicates: 64,
        seed: 42,
        metrics: metrics(),
        threads: Some(1),
    };
    let one = run_replicates(&base).unwrap();
    let four = run_replicates(&StudyConfig { threads: Some(4), ..base.clone() }).unwrap();
    let pooled = run_replicates(&StudyConfig { threads: None, ..base.clone() }).unwrap();
    let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one), bits(&four));
    assert_eq!(bits(&one), bits(&pooled));
    let other = run_replicates(&StudyConfig { seed: 43, ..base.clone() }).unwrap();
    assert_ne!(bits(&one), bits(&other));

    let mut a = Vec::new();
    let mut b = Vec::new();
    write_summaries_csv(&run_study(&base).unwrap().rows, &mut a).unwrap();
    write_summaries_csv(&run_study(&StudyConfig { threads: Some(4), ..base }).unwrap().rows, &mut b).unwrap();
    assert_eq!(a, b);
    let header = String::from_utf8(a).unwrap();
    assert_eq!(header.lines().next().unwrap(), SUMMARY_COLUMNS.join(","));
}

#[test]
fn summary_moments_of_normal_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let normal = Normal::new(1.5, 2.0).unwrap();
    let draws: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
    let s = summarize(&draws).unwrap();
    let n = draws.len() as f64;
    assert!((s.mean - 1.5).abs() < 3.0 * 2.0 / n.sqrt());
    assert!((s.sd.unwrap() - 2.0).abs() < 3.0 * 2.0 / (2.0 * (n - 1.0)).sqrt());
    assert!((s.se_mean.unwrap() - s.sd.unwrap() / n.sqrt()).abs() < 1e-15);
    assert!((s.se_sd.unwrap() - s.sd.unwrap() / (2.0 * (n - 1.0)).sqrt()).abs() < 1e-15);
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((s.sd.unwrap() - var.sqrt()).abs() < 1e-12);
}

#[test]
fn single_replicate_has_no_spread() {
    let r = ratios();
    let config = StudyConfig {
        scenario: scenario(Rational::new(0, 1)),
        ratios: r.clone(),
        procedures: procedures(&r),
        n: 50,
        replicates: 1,
        seed: 1,
        metrics: metrics(),
        threads: None,
    };
    let summary = run_study(&config).unwrap();
    assert!(summary.rows.iter().all(|row| row.sd.is_none() && row.se_mean.is_none() && row.se_sd.is_none()));
    let mut out = Vec::new();
    write_summaries_csv(&summary.rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first.split(',').nth(7), Some(""));
}

#[test]
fn invalid_studies_are_rejected() {
    let r = ratios();
    let base = StudyConfig {
        scenario: scenario(Rational::new(0, 1)),
        ratios: r.clone(),
        procedures: procedures(&r),
        n: 50,
        replicates: 10,
        seed: 1,
        metrics: metrics(),
        threads: None,
    };
    assert!(base.validate().is_ok());
    assert!(StudyConfig { n: 0, ..base.clone() }.validate().is_err());
    assert!(StudyConfig { replicates: 0, ..base.clone() }.validate().is_err());
    assert!(StudyConfig { threads: Some(0), ..base.clone() }.validate().is_err());
    assert!(StudyConfig { metrics: vec![Metric::new(Scope::Overall, 3)], ..base.clone() }.validate().is_err());
    let bad_scope = Metric::new(Scope::UnobsMargin { covariate: 0, level: 3 }, 0);
    assert!(StudyConfig { metrics: vec![bad_scope], ..base }.validate().is_err());
}

#[test]
fn complete_randomization_gamma_plateaus_at_tau_cr() {
    let sc = scenario(Rational::new(0, 1));
    let r = ratios();
    let config = GammaConfig {
        scenario: sc.clone(),
        ratios: r.clone(),
        procedure: ProcedureSpec::CompleteRandomization,
        stratum: StratumId(1),
        arm: 0,
        n_grid: vec![100, 400, 1600],
        replicates: 3000,
        seed: 9,
        threads: None,
    };
    let est = estimate_gamma(&config).unwrap();
    let p_s = sc.joint().unwrap().p_s(StratumId(1));
    assert!((p_s - 0.25).abs() < 1e-15);
    let expected = 0.2 * 0.8 * p_s;
    for point in &est.points {
        assert!((point.variance - expected).abs() < 3.0 * point.se, "{point:?} vs {expected}");
    }
    assert_eq!(est.trend, GammaTrend::Plateau);
}
