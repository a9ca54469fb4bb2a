//! End-to-end composition: ground filter, segmentation, description, map
//! building and localisation.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::features::{extract_keypose, gestalt_descriptor, GestaltParams};
use crate::forest::{ForestModel, TrainingSet};
use crate::geometry::PointCloud;
use crate::geometry::RigidTransform;
use crate::ground::filter_ground;
use crate::map::{MapEntry, SegmentMap};
use crate::matching::{
    match_segments, training_pairs, MatchCandidate, SourceSegment, TRUE_MATCH_RADIUS,
};
use crate::registration::{register, Correspondence, LocalizationResult, LocalizationStatus};
use crate::segmentation::{euclidean_cluster, Segment};

/// Non-ground part of `cloud`, or the whole cloud when `filter` is off.
pub fn remove_ground(cloud: &PointCloud, cfg: &PipelineConfig, filter: bool) -> Result<PointCloud> {
    if !filter {
        return Ok(cloud.clone());
    }
    let labels = filter_ground(cloud, &cfg.pmf)?;
    Ok(labels.split(cloud).1)
}

/// Key pose and descriptor for each segment. Segments that cannot be
/// described are skipped with a warning.
pub fn describe_segments(segments: &[Segment], params: &GestaltParams) -> Vec<SourceSegment> {
    segments
        .par_iter()
        .filter_map(|s| {
            let described = extract_keypose(&s.points).and_then(|keypose| {
                let descriptor = gestalt_descriptor(&s.points, &keypose, params)?;
                Ok(SourceSegment {
                    id: s.id,
                    keypose,
                    descriptor,
                })
            });
            match described {
                Ok(d) => Some(d),
                Err(e) => {
                    log::warn!("skipping segment {}: {e}", s.id);
                    None
                }
            }
        })
        .collect()
}

/// Segments and describes a cloud.
pub fn describe_cloud(
    cloud: &PointCloud,
    cfg: &PipelineConfig,
    filter: bool,
) -> Result<(Vec<Segment>, Vec<SourceSegment>)> {
    let objects = remove_ground(cloud, cfg, filter)?;
    let segments = euclidean_cluster(&objects, &cfg.segmentation)?;
    let described = describe_segments(&segments, &cfg.gestalt);
    log::debug!(
        "{}: {} points, {} non-ground, {} segments, {} described",
        cloud.frame_id,
        cloud.len(),
        objects.len(),
        segments.len(),
        described.len()
    );
    Ok((segments, described))
}

/// Builds a target map stamped with the configuration's map fingerprint.
pub fn build_map(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<SegmentMap> {
    cfg.validate()?;
    let (segments, described) = describe_cloud(cloud, cfg, cfg.preprocess.filter_ground_target)?;
    let points: HashMap<u32, &Segment> = segments.iter().map(|s| (s.id, s)).collect();
    let mut map = SegmentMap::new(cfg.map_fingerprint());
    map.frame_id = cloud.frame_id.clone();
    for d in described {
        map.push(MapEntry {
            segment_id: d.id,
            keypose: d.keypose,
            descriptor: d.descriptor,
            points: cfg
                .preprocess
                .store_points
                .then(|| points[&d.id].points.clone()),
        })?;
    }
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct LocalizationOutcome {
    pub result: LocalizationResult,
    /// Every scored candidate, accepted or not.
    pub candidates: Vec<MatchCandidate>,
    pub source: Vec<SourceSegment>,
}

/// Accepted candidates paired with their key poses.
pub fn correspondences(
    candidates: &[MatchCandidate],
    source: &[SourceSegment],
    map: &SegmentMap,
) -> Vec<Correspondence> {
    let src: HashMap<u32, &SourceSegment> = source.iter().map(|s| (s.id, s)).collect();
    let dst: HashMap<u32, &MapEntry> = map.entries().iter().map(|e| (e.segment_id, e)).collect();
    candidates
        .iter()
        .filter(|c| c.accepted)
        .filter_map(|c| {
            let s = src.get(&c.source_segment_id)?;
            let t = dst.get(&c.target_segment_id)?;
            Some(Correspondence {
                source_id: s.id,
                target_id: t.segment_id,
                source: s.keypose,
                target: t.keypose,
                score: c.score,
            })
        })
        .collect()
}

/// Localises `source_cloud` in `map`. The map must have been built with the
/// same map-shaping parameters as `cfg`.
pub fn localize(
    source_cloud: &PointCloud,
    map: &SegmentMap,
    model: &ForestModel,
    cfg: &PipelineConfig,
) -> Result<LocalizationOutcome> {
    cfg.validate()?;
    map.check_fingerprint(&cfg.map_fingerprint())?;
    let (_, source) = describe_cloud(source_cloud, cfg, cfg.preprocess.filter_ground_source)?;
    if source.is_empty() || map.is_empty() {
        return Ok(LocalizationOutcome {
            result: LocalizationResult::failed(LocalizationStatus::InsufficientMatches, 0),
            candidates: Vec::new(),
            source,
        });
    }
    let candidates = match_segments(&source, map, model, &cfg.matching)?;
    let c = correspondences(&candidates, &source, map);
    let result = register(&c, &cfg.registration);
    log::debug!(
        "{}: {} candidates, {} accepted, cluster {}, {:?}",
        source_cloud.frame_id,
        candidates.len(),
        c.len(),
        result.consistency_cluster_size,
        result.status
    );
    Ok(LocalizationOutcome {
        result,
        candidates,
        source,
    })
}

/// Labelled forest rows from a target cloud and a source cloud related by
/// the source → target transform `gt`. Each source segment contributes its
/// `k_neighbours` nearest map segments in descriptor space.
pub fn labeled_pairs(
    target_cloud: &PointCloud,
    source_cloud: &PointCloud,
    gt: &RigidTransform,
    cfg: &PipelineConfig,
) -> Result<TrainingSet> {
    let map = build_map(target_cloud, cfg)?;
    let (_, source) = describe_cloud(source_cloud, cfg, cfg.preprocess.filter_ground_source)?;
    training_pairs(
        &source,
        &map,
        gt,
        cfg.matching.k_neighbours,
        TRUE_MATCH_RADIUS,
    )
}
