//! Candidate retrieval in descriptor space and forest gating.
//!
//! Each source segment retrieves its `K` nearest map descriptors by plain L2
//! distance. Every candidate pair is then scored by the forest on the pair
//! feature `[|f_s| ‖ |f_t| ‖ |f_s − f_t|]` and accepted when the score reaches
//! the threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Descriptor, KeyPose, DESCRIPTOR_DIM};
use crate::forest::{ForestModel, TrainingSet};
use crate::geometry::RigidTransform;
use crate::index::SpatialIndex;
use crate::map::SegmentMap;

pub const PAIR_FEATURE_DIM: usize = 3 * DESCRIPTOR_DIM;

/// Distance below which two key poses count as the same object.
pub const TRUE_MATCH_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchParams {
    pub k_neighbours: usize,
    pub rf_threshold: f64,
    /// Scale each descriptor dimension by the map's spread before the k-NN
    /// search. Forest features always use raw descriptors.
    pub standardize: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            k_neighbours: 200,
            rf_threshold: 0.69,
            standardize: false,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbours == 0 {
            return Err(Error::InvalidParams("k_neighbours must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rf_threshold) {
            return Err(Error::InvalidParams(
                "rf_threshold must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A described source segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSegment {
    pub id: u32,
    pub keypose: KeyPose,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub source_segment_id: u32,
    pub target_segment_id: u32,
    pub l2_distance: f64,
    pub score: f64,
    pub accepted: bool,
}

pub fn build_pair_feature(fs: &[f64], ft: &[f64]) -> Result<Vec<f64>> {
    for d in [fs, ft] {
        if d.len() != DESCRIPTOR_DIM {
            return Err(Error::WidthMismatch {
                expected: DESCRIPTOR_DIM,
                got: d.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(PAIR_FEATURE_DIM);
    out.extend(fs.iter().map(|v| v.abs()));
    out.extend(ft.iter().map(|v| v.abs()));
    out.extend(fs.iter().zip(ft).map(|(a, b)| (a - b).abs()));
    Ok(out)
}

/// Per-dimension scaling used when [`MatchParams::standardize`] is set.
#[derive(Debug, Clone)]
struct Scaling {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Scaling {
    fn from_map(map: &SegmentMap) -> Self {
        let n = map.len() as f64;
        let mut mean = vec![0.0; DESCRIPTOR_DIM];
        for e in map.entries() {
            for (m, v) in mean.iter_mut().zip(e.descriptor.as_slice()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; DESCRIPTOR_DIM];
        for e in map.entries() {
            for ((s, v), m) in var.iter_mut().zip(e.descriptor.as_slice()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_std = var
            .iter()
            .map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, d: &[f64]) -> Vec<f64> {
        d.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

/// Scores the `K` nearest map segments of every source segment.
///
/// Output is ordered by descending score, then source id, then distance,
/// then target id.
pub fn match_segments(
    source: &[SourceSegment],
    target: &SegmentMap,
    model: &ForestModel,
    params: &MatchParams,
) -> Result<Vec<MatchCandidate>> {
    params.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyMap);
    }
    if model.width() != PAIR_FEATURE_DIM {
        return Err(Error::WidthMismatch {
            expected: PAIR_FEATURE_DIM,
            got: model.width(),
        });
    }
    let scaling = params.standardize.then(|| Scaling::from_map(target));
    let rows: Vec<Vec<f64>> = target
        .entries()
        .iter()
        .map(|e| match &scaling {
            Some(s) => s.apply(e.descriptor.as_slice()),
            None => e.descriptor.as_slice().to_vec(),
        })
        .collect();
    let index = SpatialIndex::from_rows(&rows)?;

    let per_source: Vec<Vec<MatchCandidate>> = source
        .par_iter()
        .map(|s| -> Result<Vec<MatchCandidate>> {
            let query = match &scaling {
                Some(sc) => sc.apply(s.descriptor.as_slice()),
                None => s.descriptor.as_slice().to_vec(),
            };
            index
                .knn(&query, params.k_neighbours)?
                .into_iter()
                .map(|nb| {
                    let entry = &target.entries()[nb.id];
                    let x =
                        build_pair_feature(s.descriptor.as_slice(), entry.descriptor.as_slice())?;
                    let score = model.score(&x)?;
                    Ok(MatchCandidate {
                        source_segment_id: s.id,
                        target_segment_id: entry.segment_id,
                        l2_distance: s.descriptor.l2_distance(&entry.descriptor),
                        score,
                        accepted: score >= params.rf_threshold,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut out: Vec<MatchCandidate> = per_source.into_iter().flatten().collect();
    sort_candidates(&mut out);
    Ok(out)
}

pub fn sort_candidates(c: &mut [MatchCandidate]) {
    c.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.source_segment_id.cmp(&b.source_segment_id))
            .then(a.l2_distance.total_cmp(&b.l2_distance))
            .then(a.target_segment_id.cmp(&b.target_segment_id))
    });
}

/// Re-applies a threshold to already scored candidates.
pub fn rethreshold(candidates: &[MatchCandidate], threshold: f64) -> Vec<MatchCandidate> {
    candidates
        .iter()
        .map(|c| MatchCandidate {
            accepted: c.score >= threshold,
            ..c.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub source_segment_id: u32,
    pub target_segment_id: u32,
    pub positive: bool,
}

pub fn is_true_match(source: &KeyPose, target: &KeyPose, gt: &RigidTransform, radius: f64) -> bool {
    (gt.apply(&source.position()) - target.position()).norm() < radius
}

/// Labels every source × target pair: positive iff the source key pose,
/// moved by `gt`, lies strictly within `radius` of the target key pose.
/// Pairs are listed source-major in input order.
pub fn label_pairs(
    source: &[(u32, KeyPose)],
    target: &[(u32, KeyPose)],
    gt: &RigidTransform,
    radius: f64,
) -> Vec<LabeledPair> {
    let positions: Vec<_> = target.iter().map(|(_, k)| k.position()).collect();
    let index = SpatialIndex::from_points(&positions);
    let mut out = Vec::with_capacity(source.len() * target.len());
    for (sid, sk) in source {
        let p = gt.apply(&sk.position());
        let near: Vec<usize> = index
            .radius_neighbors(&[p.x, p.y, p.z], radius)
            .into_iter()
            .filter(|&j| (positions[j] - p).norm() < radius)
            .collect();
        for (j, (tid, _)) in target.iter().enumerate() {
            out.push(LabeledPair {
                source_segment_id: *sid,
                target_segment_id: *tid,
                positive: near.binary_search(&j).is_ok(),
            });
        }
    }
    out
}

/// Forest training rows from the k-NN candidates of `source` in `target`,
/// labelled with the ground-truth transform.
pub fn training_pairs(
    source: &[SourceSegment],
    target: &SegmentMap,
    gt: &RigidTransform,
    k: usize,
    radius: f64,
) -> Result<TrainingSet> {
    if target.is_empty() {
        return Err(Error::EmptyMap);
    }
    let rows: Vec<&[f64]> = target
        .entries()
        .iter()
        .map(|e| e.descriptor.as_slice())
        .collect();
    let index = SpatialIndex::from_rows(&rows)?;
    let mut set = TrainingSet::new(PAIR_FEATURE_DIM);
    for s in source {
        for nb in index.knn(s.descriptor.as_slice(), k)? {
            let e = &target.entries()[nb.id];
            let x = build_pair_feature(s.descriptor.as_slice(), e.descriptor.as_slice())?;
            set.push(&x, is_true_match(&s.keypose, &e.keypose, gt, radius))?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use nalgebra::Vector3;

    #[test]
    fn identical_descriptors_zero_delta() {
        let d: Vec<f64> = (0..66).map(|i| i as f64 - 30.0).collect();
        let x = build_pair_feature(&d, &d).unwrap();
        assert_eq!(x.len(), PAIR_FEATURE_DIM);
        assert!(x[132..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negated_descriptor() {
        let d: Vec<f64> = (0..66).map(|i| (i as f64 * 0.37).sin()).collect();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let x = build_pair_feature(&d, &neg).unwrap();
        assert_eq!(&x[..66], &x[66..132]);
        for i in 0..66 {
            assert_eq!(x[132 + i], 2.0 * d[i].abs());
        }
    }

    #[test]
    fn width_checked() {
        assert!(matches!(
            build_pair_feature(&[0.0; 65], &[0.0; 66]),
            Err(Error::WidthMismatch { .. })
        ));
    }

    #[test]
    fn half_metre_is_not_a_match() {
        let a = KeyPose::from_position_yaw(Point::origin(), 0.0);
        let b = KeyPose::from_position_yaw(Point::new(0.5, 0.0, 0.0), 0.0);
        let c = KeyPose::from_position_yaw(Point::new(0.4999, 0.0, 0.0), 0.0);
        let id = RigidTransform::identity();
        assert!(is_true_match(&a, &a, &id, TRUE_MATCH_RADIUS));
        assert!(!is_true_match(&a, &b, &id, TRUE_MATCH_RADIUS));
        assert!(is_true_match(&a, &c, &id, TRUE_MATCH_RADIUS));
        let labels = label_pairs(&[(7, a)], &[(1, b), (2, c)], &id, TRUE_MATCH_RADIUS);
        assert_eq!(
            labels.iter().map(|l| l.positive).collect::<Vec<_>>(),
            vec![false, true]
        );
        let shifted = RigidTransform::from_translation(Vector3::new(0.5, 0.0, 0.0));
        assert!(label_pairs(&[(7, a)], &[(1, b)], &shifted, TRUE_MATCH_RADIUS)[0].positive);
    }

    #[test]
    fn params_validation() {
        assert!(MatchParams {
            k_neighbours: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MatchParams {
            rf_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
