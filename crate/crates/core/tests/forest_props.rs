use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nsm_core::forest::{encode_model, rf_score, rf_train, ForestModel, RfParams, TrainingSet};

/// Label depends on feature 0 only; the other features are noise.
fn one_relevant(seed: u64, n: usize, width: usize) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TrainingSet::new(width);
    for _ in 0..n {
        let label = rng.random_bool(0.4);
        let mut x: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        x[0] = if label { 1.0 } else { -1.0 } + rng.random_range(-0.8..0.8);
        set.push(&x, label).unwrap();
    }
    set
}

fn small(seed: u64) -> RfParams {
    RfParams {
        n_trees: 15,
        seed,
        negative_ratio: 0.0,
        ..RfParams::default()
    }
}

fn model(seed: u64) -> ForestModel {
    rf_train(&one_relevant(seed, 300, 6), &small(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scores_are_probabilities(seed in 0u64..50, x in prop::collection::vec(prop_oneof![-1e12f64..1e12, -2.0f64..2.0], 6)) {
        let s = rf_score(&model(seed), &x).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn relevant_feature_drives_the_score(seed in 0u64..50) {
        let m = model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        let (mut hi, mut lo) = (0.0, 0.0);
        for _ in 0..200 {
            let mut x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            x[0] = 1.0;
            hi += rf_score(&m, &x).unwrap();
            x[0] = -1.0;
            lo += rf_score(&m, &x).unwrap();
        }
        prop_assert!(hi > lo);
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..50) {
        let data = one_relevant(seed, 200, 5);
        let params = RfParams { n_trees: 8, seed, ..RfParams::default() };
        let a = encode_model(&rf_train(&data, &params).unwrap());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| encode_model(&rf_train(&data, &params).unwrap()));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn wrong_width_is_rejected() {
    assert!(rf_score(&model(1), &[0.0; 5]).is_err());
}
