mod common;

use std::collections::BTreeMap;

use common::numeric_gradient;
use dermtriage::clinical::{
    encode_covariates, fit_standardizer, logistic_gradient, logistic_loss, mean_std, train_logistic,
    CategoricalFeature, CovariateRow, CovariateSchema, LogisticOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema() -> CovariateSchema {
    CovariateSchema {
        continuous: vec!["age".into(), "visits".into()],
        categorical: vec![CategoricalFeature {
            name: "race".into(),
            levels: vec!["a".into(), "b".into()],
        }],
    }
}

fn row(id: usize, age: f64, visits: f64, race: &str) -> CovariateRow {
    let values: BTreeMap<String, Option<String>> = [
        ("age".to_string(), Some(age.to_string())),
        ("visits".to_string(), Some(visits.to_string())),
        ("race".to_string(), Some(race.to_string())),
    ]
    .into_iter()
    .collect();
    CovariateRow {
        image_id: format!("img{id}"),
        values,
    }
}

fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<bool>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<bool> = (0..n).map(|i| i % 2 == 0 || rng.gen_bool(0.3)).collect();
    let params: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    (xs, ys, params)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let (xs, ys, params) = random_problem(seed, 40, 5);
        let analytic = logistic_gradient(&params, &xs, &ys, 1.0);
        let numeric = numeric_gradient(|p| logistic_loss(p, &xs, &ys, 1.0), &params, 1e-5);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "seed {seed}: max diff {worst}");
    }
}

#[test]
fn population_std_example() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn standardization_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<CovariateRow> = (0..200)
        .map(|i| row(i, rng.gen_range(20.0..90.0), f64::from(rng.gen_range(0u8..10)), "a"))
        .collect();
    let stats = fit_standardizer(&rows, &schema()).unwrap();
    let encoded: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| encode_covariates(r, &schema(), &stats).unwrap().0)
        .collect();
    for j in 0..2 {
        let col: Vec<f64> = encoded.iter().map(|v| v[j]).collect();
        let (m, s) = mean_std(&col);
        assert!(m.abs() < 1e-9, "feature {j} mean {m}");
        assert!((s - 1.0).abs() < 1e-9, "feature {j} std {s}");
    }
    // Refitting on already-standardized values is idempotent.
    let standardized: Vec<CovariateRow> = encoded
        .iter()
        .enumerate()
        .map(|(i, v)| row(i, v[0], v[1], "a"))
        .collect();
    let again = fit_standardizer(&standardized, &schema()).unwrap();
    assert!(again.features[0].mean.abs() < 1e-9 && (again.features[0].std - 1.0).abs() < 1e-9);
}

#[test]
fn constant_column_dropped() {
    let rows = vec![row(0, 5.0, 1.0, "a"), row(1, 5.0, 2.0, "b"), row(2, 5.0, 3.0, "a")];
    let stats = fit_standardizer(&rows, &schema()).unwrap();
    assert_eq!(stats.dropped, vec!["age".to_string()]);
    assert_eq!(stats.features.len(), 1);
}

#[test]
fn one_hot_blocks_and_mean_value() {
    let rows = vec![row(0, 30.0, 1.0, "a"), row(1, 50.0, 3.0, "b")];
    let stats = fit_standardizer(&rows, &schema()).unwrap();
    let at_mean = encode_covariates(&row(9, 40.0, 2.0, "b"), &schema(), &stats).unwrap().0;
    assert_eq!(&at_mean[..2], &[0.0, 0.0]);
    assert_eq!(&at_mean[2..], &[0.0, 1.0, 0.0]);
    let unseen = encode_covariates(&row(9, 40.0, 2.0, "zzz"), &schema(), &stats).unwrap().0;
    assert_eq!(&unseen[2..], &[0.0, 0.0, 1.0]);
    let mut bad = row(9, 40.0, 2.0, "a");
    bad.values.insert("age".into(), Some("old".into()));
    let err = encode_covariates(&bad, &schema(), &stats).unwrap_err().to_string();
    assert!(err.contains("age"), "{err}");
}

#[test]
fn logistic_converges_and_separates() {
    let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect();
    let ys: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
    let m = train_logistic(&xs, &ys, &LogisticOptions::default()).unwrap();
    assert!(m.weights[0] > 0.0);
    assert!(m.gradient_norm <= 1e-8);
    assert!(train_logistic(&xs, &vec![true; 20], &LogisticOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn logistic_loss_is_convex(seed in any::<u64>(), t in 0.0..1.0f64) {
        let (xs, ys, a) = random_problem(seed, 30, 4);
        let (_, _, b) = random_problem(seed.wrapping_add(1), 30, 4);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let lhs = logistic_loss(&mid, &xs, &ys, 1.0);
        let rhs = t * logistic_loss(&a, &xs, &ys, 1.0) + (1.0 - t) * logistic_loss(&b, &xs, &ys, 1.0);
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn one_hot_block_sums_to_one(level in "[a-c]{0,2}", age in 0.0..100.0f64) {
        let rows = vec![row(0, 30.0, 1.0, "a"), row(1, 50.0, 3.0, "b")];
        let stats = fit_standardizer(&rows, &schema()).unwrap();
        let v = encode_covariates(&row(2, age, 1.0, &level), &schema(), &stats).unwrap().0;
        prop_assert_eq!(v[2..].iter().sum::<f64>(), 1.0);
    }
}
