//! Geometric-consistency grouping of accepted matches and RANSAC estimation
//! of the source → target transform from key-pose positions.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::KeyPose;
use crate::geometry::{Point, RigidTransform};

/// Fewest correspondences that determine a rigid transform.
pub const MIN_POSE_MATCHES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source_id: u32,
    pub target_id: u32,
    pub source: KeyPose,
    pub target: KeyPose,
    /// Forest score of the match.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParams {
    /// Allowed difference between paired distances, metres.
    pub epsilon: f64,
    /// Smallest consistent group accepted as a localisation (τ).
    pub min_cluster_size: usize,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        Self {
            epsilon: 0.4,
            min_cluster_size: 4,
        }
    }
}

impl ConsistencyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParams("epsilon must be > 0".into()));
        }
        if self.min_cluster_size < MIN_POSE_MATCHES {
            return Err(Error::InvalidParams(format!(
                "min_cluster_size must be >= {MIN_POSE_MATCHES}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationParams {
    pub epsilon: f64,
    pub min_cluster_size: usize,
    pub ransac_iterations: usize,
    pub inlier_radius: f64,
    pub seed: u64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            epsilon: 0.4,
            min_cluster_size: 4,
            ransac_iterations: 1000,
            inlier_radius: 0.4,
            seed: 0,
        }
    }
}

impl RegistrationParams {
    pub fn consistency(&self) -> ConsistencyParams {
        ConsistencyParams {
            epsilon: self.epsilon,
            min_cluster_size: self.min_cluster_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.consistency().validate()?;
        if self.ransac_iterations == 0 {
            return Err(Error::InvalidParams(
                "ransac_iterations must be >= 1".into(),
            ));
        }
        if !(self.inlier_radius > 0.0) {
            return Err(Error::InvalidParams("inlier_radius must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationStatus {
    Localized,
    InsufficientMatches,
    RansacFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    /// Maps source coordinates into the target map.
    pub transform: RigidTransform,
    pub inliers: Vec<Correspondence>,
    pub consistency_cluster_size: usize,
    pub status: LocalizationStatus,
}

impl LocalizationResult {
    pub fn failed(status: LocalizationStatus, cluster: usize) -> Self {
        Self {
            transform: RigidTransform::identity(),
            inliers: Vec::new(),
            consistency_cluster_size: cluster,
            status,
        }
    }

    pub fn is_localized(&self) -> bool {
        self.status == LocalizationStatus::Localized
    }
}

/// Whether two matches keep their mutual distance within `epsilon`
/// (strictly), comparing key-pose positions only.
pub fn pairwise_consistent(p: &Correspondence, q: &Correspondence, epsilon: f64) -> bool {
    let dt = (p.target.position() - q.target.position()).norm();
    let ds = (p.source.position() - q.source.position()).norm();
    (dt - ds).abs() < epsilon
}

/// Largest greedily grown group of mutually consistent matches, as indices
/// into `c` in the order they joined.
///
/// Seeds are taken in descending score order among matches not yet placed in
/// any group; a group takes, in the same order, every match consistent with
/// all current members.
pub fn largest_consistent_group(c: &[Correspondence], epsilon: f64) -> Vec<usize> {
    let n = c.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| c[b].score.total_cmp(&c[a].score).then(a.cmp(&b)));
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let ok = pairwise_consistent(&c[i], &c[j], epsilon);
            adj[i * n + j] = ok;
            adj[j * n + i] = ok;
        }
    }
    let mut grouped = vec![false; n];
    let mut best: Vec<usize> = Vec::new();
    for &seed in &order {
        if grouped[seed] {
            continue;
        }
        let mut group = vec![seed];
        for &q in &order {
            if q != seed && group.iter().all(|&m| adj[m * n + q]) {
                group.push(q);
            }
        }
        for &m in &group {
            grouped[m] = true;
        }
        if group.len() > best.len() {
            best = group;
        }
    }
    best
}

/// The largest consistent group if it has at least `min_cluster_size`
/// members, otherwise an empty set.
pub fn consistency_filter(c: &[Correspondence], params: &ConsistencyParams) -> Vec<Correspondence> {
    let group = largest_consistent_group(c, params.epsilon);
    if group.len() < params.min_cluster_size {
        return Vec::new();
    }
    group.into_iter().map(|i| c[i]).collect()
}

/// Least-squares rigid alignment `target ≈ R·source + t` (Kabsch with
/// reflection correction). Needs at least three pairs.
pub fn fit_rigid(source: &[Point], target: &[Point]) -> Result<RigidTransform> {
    if source.len() != target.len() || source.len() < MIN_POSE_MATCHES {
        return Err(Error::TooFewPoints {
            got: source.len().min(target.len()),
            need: MIN_POSE_MATCHES,
        });
    }
    let n = source.len() as f64;
    let cs = source.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let ct = target.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s.coords - cs) * (t.coords - ct).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    RigidTransform::new(r, ct - r * cs)
}

fn is_degenerate(a: &Point, b: &Point, c: &Point) -> bool {
    let area2 = (b - a).cross(&(c - a)).norm();
    let scale = (b - a).norm().max((c - a).norm()).max(1e-12);
    area2 < 1e-3 * scale * scale
}

fn count_inliers(c: &[Correspondence], t: &RigidTransform, radius: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut residual = 0.0;
    for (i, m) in c.iter().enumerate() {
        let e = (t.apply(&m.source.position()) - m.target.position()).norm();
        if e <= radius {
            inliers.push(i);
            residual += e;
        }
    }
    (inliers, residual)
}

/// RANSAC over minimal triples, then a least-squares refit on the inliers of
/// the best hypothesis. When there are no more triples than iterations every
/// triple is tried, in lexicographic order.
pub fn estimate_pose(
    c: &[Correspondence],
    ransac_iters: usize,
    inlier_radius: f64,
    seed: u64,
) -> LocalizationResult {
    let n = c.len();
    if n < MIN_POSE_MATCHES {
        return LocalizationResult::failed(LocalizationStatus::InsufficientMatches, n);
    }
    let src: Vec<Point> = c.iter().map(|m| m.source.position()).collect();
    let dst: Vec<Point> = c.iter().map(|m| m.target.position()).collect();

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut consider = |tri: [usize; 3]| {
        if is_degenerate(&src[tri[0]], &src[tri[1]], &src[tri[2]]) {
            return;
        }
        let s = [src[tri[0]], src[tri[1]], src[tri[2]]];
        let d = [dst[tri[0]], dst[tri[1]], dst[tri[2]]];
        let Ok(t) = fit_rigid(&s, &d) else { return };
        let (inl, res) = count_inliers(c, &t, inlier_radius);
        let better = match &best {
            None => true,
            Some((b, bres)) => inl.len() > b.len() || (inl.len() == b.len() && res < *bres),
        };
        if better {
            best = Some((inl, res));
        }
    };

    let triples = n * (n - 1) * (n - 2) / 6;
    if triples <= ransac_iters {
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    consider([i, j, k]);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..ransac_iters {
            let s = sample(&mut rng, n, 3);
            consider([s.index(0), s.index(1), s.index(2)]);
        }
    }

    let Some((inliers, _)) = best.filter(|(b, _)| b.len() >= MIN_POSE_MATCHES) else {
        return LocalizationResult::failed(LocalizationStatus::RansacFailed, n);
    };
    let s: Vec<Point> = inliers.iter().map(|&i| src[i]).collect();
    let d: Vec<Point> = inliers.iter().map(|&i| dst[i]).collect();
    match fit_rigid(&s, &d) {
        Ok(transform) => LocalizationResult {
            transform,
            inliers: inliers.iter().map(|&i| c[i]).collect(),
            consistency_cluster_size: n,
            status: LocalizationStatus::Localized,
        },
        Err(_) => LocalizationResult::failed(LocalizationStatus::RansacFailed, n),
    }
}

/// Consistency grouping followed by pose estimation.
pub fn register(c: &[Correspondence], params: &RegistrationParams) -> LocalizationResult {
    let group = largest_consistent_group(c, params.epsilon);
    if group.len() < params.min_cluster_size {
        return LocalizationResult::failed(LocalizationStatus::InsufficientMatches, group.len());
    }
    let members: Vec<Correspondence> = group.iter().map(|&i| c[i]).collect();
    estimate_pose(
        &members,
        params.ransac_iterations,
        params.inlier_radius,
        params.seed,
    )
}
