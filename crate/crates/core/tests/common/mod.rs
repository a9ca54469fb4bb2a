#![allow(dead_code)]

use nalgebra::Vector3;
use nsm_core::config::PipelineConfig;
use nsm_core::eval::roc;
use nsm_core::forest::{rf_train, ForestModel, TrainingSet};
use nsm_core::matching::PAIR_FEATURE_DIM;
use nsm_core::pipeline::labeled_pairs;
use nsm_core::synthgen::{
    derive_source, generate_scene, DerivedSource, LabeledScene, Perturbation, SceneSpec,
};
use nsm_core::RigidTransform;

pub const TRAIN_SEEDS: std::ops::Range<u64> = 1000..1006;
pub const VALIDATION_SEEDS: std::ops::Range<u64> = 2000..2002;

/// A planted source → target transform: yaw anywhere in ±180°, up to 10 m
/// of horizontal offset.
pub fn planted(seed: u64) -> RigidTransform {
    let s = seed as f64;
    let yaw = (s * 1.7).sin() * 3.1;
    RigidTransform::from_yaw(yaw, Vector3::new(s.cos() * 8.0, (s * 0.3).sin() * 8.0, 0.1))
}

pub fn forest_frame(seed: u64) -> (LabeledScene, DerivedSource) {
    let scene = generate_scene(&SceneSpec::forest(seed)).unwrap();
    let source = derive_source(&scene, &planted(seed), &Perturbation::default(), seed + 77);
    (scene, source)
}

pub fn pairs_for(seeds: std::ops::Range<u64>, cfg: &PipelineConfig) -> TrainingSet {
    let mut set = TrainingSet::new(PAIR_FEATURE_DIM);
    for seed in seeds {
        let (scene, src) = forest_frame(seed);
        let rows = labeled_pairs(&scene.cloud, &src.cloud, &src.gt, cfg).unwrap();
        for i in 0..rows.len() {
            set.push(rows.row(i), rows.label(i)).unwrap();
        }
    }
    set
}

pub fn train(cfg: &PipelineConfig) -> ForestModel {
    rf_train(&pairs_for(TRAIN_SEEDS, cfg), &cfg.rf).unwrap()
}

/// Score threshold at a false-positive rate of 0.1 on held-out scenes.
pub fn calibrate(model: &ForestModel, cfg: &PipelineConfig) -> f64 {
    let val = pairs_for(VALIDATION_SEEDS, cfg);
    let scored: Vec<(f64, bool)> = (0..val.len())
        .map(|i| (model.score(val.row(i)).unwrap(), val.label(i)))
        .collect();
    roc(&scored).unwrap().operating_point(0.1).threshold
}

/// Descriptor distance recovered from a pair feature's difference block.
pub fn l2_of_pair(x: &[f64]) -> f64 {
    x[2 * PAIR_FEATURE_DIM / 3..]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
