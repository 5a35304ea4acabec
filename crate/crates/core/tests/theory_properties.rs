use std::sync::Arc;

use covbal_core::ledger::Scope;
use covbal_core::scenarios::{delta_cells, delta_model, threshold_model, PopulationModel, Scenario};
use covbal_core::schema::build_schema;
use covbal_core::theory::{
    conditional_entropy, joint_entropy, lambda1_sq, mutual_information, observed_entropy,
    observed_given_target_entropy, sum_of_variances, target_entropy, tau_cr_sq, tau_sq,
    unweighted_sum_of_variances, weighted_cond_entropy, JointPmf, UnobservedTarget,
};
use covbal_core::{Block, CovariateSchema, Rational, StratumId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_schema(rng: &mut ChaCha8Rng) -> Arc<CovariateSchema> {
    let obs: Vec<(String, u16)> = (0..rng.random_range(1..=3))
        .map(|i| (format!("X{}", i + 1), rng.random_range(2..=3)))
        .collect();
    let unobs: Vec<(String, u16)> = (0..rng.random_range(1..=2))
        .map(|i| (format!("U{}", i + 1), rng.random_range(2..=3)))
        .collect();
    let o: Vec<(&str, u16)> = obs.iter().map(|(n, l)| (n.as_str(), *l)).collect();
    let u: Vec<(&str, u16)> = unobs.iter().map(|(n, l)| (n.as_str(), *l)).collect();
    Arc::new(build_schema(&o, &u).unwrap())
}

fn random_joint(rng: &mut ChaCha8Rng, sparse: bool) -> JointPmf {
    let schema = random_schema(rng);
    let cells = schema.observed_strata() * schema.unobserved_strata();
    let mut table: Vec<f64> = (0..cells)
        .map(|_| {
            if sparse && rng.random::<f64>() < 0.25 {
                0.0
            } else {
                rng.random::<f64>() + 1e-3
            }
        })
        .collect();
    if table.iter().all(|&v| v == 0.0) {
        table[0] = 1.0;
    }
    let total: f64 = table.iter().sum();
    table.iter_mut().for_each(|v| *v /= total);
    JointPmf::new(schema, table).unwrap()
}

struct Naive {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

fn naive_table(pmf: &JointPmf, target: UnobservedTarget) -> Naive {
    let schema = pmf.schema();
    let rows = schema.observed_strata();
    let l_u = schema.unobserved_strata();
    let cols = match target {
        UnobservedTarget::All => l_u,
        UnobservedTarget::Covariate(j) => schema.unobserved()[j].levels as usize,
    };
    let mut cells = vec![0.0; rows * cols];
    for s in 0..rows {
        for r in 0..l_u {
            let t = match target {
                UnobservedTarget::All => r,
                UnobservedTarget::Covariate(j) => {
                    schema.stratum_levels(Block::Unobserved, StratumId(r as u32)).unwrap()[j] as usize - 1
                }
            };
            cells[s * cols + t] += pmf.table()[s * l_u + r];
        }
    }
    Naive { rows, cols, cells }
}

fn h(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

#[test]
fn sum_of_variances_stays_below_conditional_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut violations = 0;
    let mut dense_checked = 0;
    for i in 0..2000 {
        let pmf = random_joint(&mut rng, i % 2 == 1);
        let rho = [0.2, 0.3, 0.5, 1.0 / 3.0][i % 4];
        let mut targets = vec![UnobservedTarget::All];
        targets.extend((0..pmf.schema().unobserved().len()).map(UnobservedTarget::Covariate));
        for target in targets {
            let t = naive_table(&pmf, target);
            let mut sv = 0.0;
            let mut hc = 0.0;
            for s in 0..t.rows {
                let row = &t.cells[s * t.cols..(s + 1) * t.cols];
                let p_s: f64 = row.iter().sum();
                if p_s > 0.0 {
                    sv += row.iter().map(|&p| p * (1.0 - p / p_s)).sum::<f64>();
                    hc += p_s * h(&row.iter().map(|&p| p / p_s).collect::<Vec<_>>());
                }
            }
            let sv_g = sum_of_variances(&pmf, rho, target).unwrap();
            let h_g = weighted_cond_entropy(&pmf, rho, target).unwrap();
            assert!((unweighted_sum_of_variances(&pmf, target).unwrap() - sv).abs() < 1e-12);
            assert!((conditional_entropy(&pmf, target).unwrap() - hc).abs() < 1e-12);
            assert!((sv_g - rho * (1.0 - rho) * sv).abs() < 1e-12);
            let degenerate = hc == 0.0;
            if degenerate {
                assert_eq!(sv, 0.0);
            } else if !(sv_g < h_g) {
                violations += 1;
            }
            dense_checked += usize::from(i % 2 == 0);
        }
    }
    assert_eq!(violations, 0);
    assert!(dense_checked >= 1000);
}

#[test]
fn chain_rule_bounds_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..1000 {
        let pmf = random_joint(&mut rng, i % 3 == 0);
        let mut targets = vec![UnobservedTarget::All];
        targets.extend((0..pmf.schema().unobserved().len()).map(UnobservedTarget::Covariate));
        let h_x = observed_entropy(&pmf);
        assert!((h_x - h(pmf.observed_marginal())).abs() < 1e-12);
        for target in targets {
            let h_u = target_entropy(&pmf, target).unwrap();
            let h_xu = joint_entropy(&pmf, target).unwrap();
            let h_u_x = conditional_entropy(&pmf, target).unwrap();
            let h_x_u = observed_given_target_entropy(&pmf, target).unwrap();
            let mi = mutual_information(&pmf, target).unwrap();
            assert!((h_xu - (h_x + h_u_x)).abs() < 1e-10);
            assert!((h_xu - (h_u + h_x_u)).abs() < 1e-10);
            assert!(h_u_x >= -1e-10 && h_u_x <= h_u + 1e-10);
            assert!((mi - (h_u - h_u_x)).abs() < 1e-10);
            assert!((mi - (h_x - h_x_u)).abs() < 1e-10);
            assert!(mi >= 0.0);
        }
    }
}

#[test]
fn tau_is_additive_over_strata() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let pmf = random_joint(&mut rng, false);
        let schema = pmf.schema().clone();
        let rho = 0.3;
        for (j, cov) in schema.unobserved().iter().enumerate() {
            for level in 1..=cov.levels {
                let margin = Scope::UnobsMargin { covariate: j, level };
                let whole = tau_sq(&pmf, rho, &margin).unwrap();
                let whole_cr = tau_cr_sq(&pmf, rho, &margin).unwrap();
                let mut parts = 0.0;
                let mut parts_cr = 0.0;
                let mut oracle = 0.0;
                let t = naive_table(&pmf, UnobservedTarget::Covariate(j));
                for s in 0..schema.observed_strata() as u32 {
                    let scope = Scope::JointStratumMargin { stratum: StratumId(s), covariate: j, level };
                    parts += tau_sq(&pmf, rho, &scope).unwrap();
                    parts_cr += tau_cr_sq(&pmf, rho, &scope).unwrap();
                    let row = &t.cells[s as usize * t.cols..(s as usize + 1) * t.cols];
                    let p_s: f64 = row.iter().sum();
                    let c = row[level as usize - 1] / p_s;
                    oracle += p_s * c * (1.0 - c);
                }
                assert!((whole - parts).abs() < 1e-12);
                assert!((whole_cr - parts_cr).abs() < 1e-12);
                assert!((whole - rho * (1.0 - rho) * oracle).abs() < 1e-12);
                let p_event: f64 = (0..t.rows).map(|s| t.cells[s * t.cols + level as usize - 1]).sum();
                assert!((whole_cr - rho * (1.0 - rho) * p_event).abs() < 1e-12);
                assert!(whole <= whole_cr + 1e-15);
            }
        }
    }
}

#[test]
fn delta_model_marginals_are_exact() {
    let quarter = Rational::new(1, 4);
    for k in 0..=12 {
        let delta = Rational::new(k, 64);
        let cells = delta_cells(delta).unwrap();
        assert_eq!(cells.iter().copied().sum::<Rational>(), Rational::from_integer(1));
        for bit in 0..4 {
            let ones: Rational = (0..16).filter(|c| (c >> bit) & 1 == 1).map(|c| cells[c]).sum();
            assert_eq!(ones, Rational::new(1, 2));
        }
        let agree: Rational = (0..16).filter(|c| c >> 2 == c & 3).map(|c| cells[c]).sum();
        assert_eq!(agree, quarter + delta * 4);
        for x in 0..4 {
            let row: Rational = (0..4).map(|u| cells[x * 4 + u]).sum();
            assert_eq!(row, quarter);
        }
    }
    assert!(delta_cells(Rational::new(13, 64)).is_err());
    assert!(delta_cells(Rational::new(-1, 64)).is_err());
}

#[test]
fn threshold_u1_rate_matches_binomial_sum() {
    let model = threshold_model(1.0, 1.0).unwrap();
    let sc = Scenario::with_default_split(Arc::new(model)).unwrap();
    let pmf = sc.joint().unwrap();
    assert!((pmf.unobserved_margin(0, 2) - 0.298_677_881_324_242_36).abs() < 1e-12);
    assert!((pmf.unobserved_margin(1, 2) - 0.355_007_579_976_386_66).abs() < 1e-12);
    for (sigma, expected) in [(2.0, 0.347_967_105_963_969_09), (3.0, 0.384_173_389_506_161_98)] {
        let sc = Scenario::with_default_split(Arc::new(threshold_model(sigma, 1.0).unwrap())).unwrap();
        assert!((sc.joint().unwrap().unobserved_margin(0, 2) - expected).abs() < 1e-12);
    }
}

#[test]
fn lambda1_closed_form() {
    assert!((lambda1_sq(0.2, 10) - 0.16 * 11.0 / 6.0).abs() < 1e-15);
    let model = delta_model(Rational::new(0, 1)).unwrap();
    assert!(matches!(model, PopulationModel::TabularJoint(_)));
}
