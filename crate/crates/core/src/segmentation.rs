//! Euclidean clustering of non-ground points into object-sized segments.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::index::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationParams {
    /// Linkage radius in metres.
    pub max_distance: f64,
    pub min_points: usize,
    pub max_points: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            max_distance: 0.2,
            min_points: 200,
            max_points: 1500,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_distance > 0.0) || !self.max_distance.is_finite() {
            return Err(Error::InvalidParams("max_distance must be > 0".into()));
        }
        if self.min_points == 0 || self.min_points > self.max_points {
            return Err(Error::InvalidParams(format!(
                "need 0 < min_points <= max_points, got {}..{}",
                self.min_points, self.max_points
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u32,
    /// Points in input order.
    pub points: Vec<Point>,
    /// Indices of `points` in the clustered cloud, ascending.
    pub indices: Vec<usize>,
    pub source_frame_id: String,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud::new(self.points.clone()).with_frame_id(self.source_frame_id.clone())
    }
}

/// Connected components of the `max_distance` graph, keeping those with a
/// size in `[min_points, max_points]`.
///
/// Segments are ordered by descending size, then by their smallest member
/// index, and numbered from zero in that order.
pub fn euclidean_cluster(cloud: &PointCloud, params: &SegmentationParams) -> Result<Vec<Segment>> {
    params.validate()?;
    let components = connected_components(&cloud.points, params.max_distance);
    let mut kept: Vec<Vec<usize>> = components
        .into_iter()
        .filter(|c| (params.min_points..=params.max_points).contains(&c.len()))
        .collect();
    kept.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(i, indices)| Segment {
            id: i as u32,
            points: indices.iter().map(|&j| cloud.points[j]).collect(),
            indices,
            source_frame_id: cloud.frame_id.clone(),
        })
        .collect())
}

/// All components, each sorted ascending, listed by smallest member.
pub fn connected_components(points: &[Point], radius: f64) -> Vec<Vec<usize>> {
    let index = SpatialIndex::from_points(points);
    let mut visited = vec![false; points.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    for seed in 0..points.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let p = points[i];
            for j in index.radius_neighbors(&[p.x, p.y, p.z], radius) {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}
