//! Oriented key poses and the 66-dimensional hybrid segment descriptor.
//!
//! A key pose anchors a segment: its position is the component-wise median of
//! the segment's points, its `z` axis is global up and its `x` axis follows the
//! dominant horizontal spread of the points. The descriptor is computed in that
//! frame, so two observations of the same object land in the same bins even
//! when they are seen from different viewpoints.
//!
//! Descriptor layout, in order:
//!
//! | index      | content                                      |
//! |------------|----------------------------------------------|
//! | `2b`       | mean height (key-pose frame) of points in bin `b` |
//! | `2b + 1`   | population variance of those heights          |
//! | `64`       | planarity `λ₂ − λ₁`                           |
//! | `65`       | cylindricality `λ₃ − λ₂`                      |
//!
//! with `b = ring · azimuthal_divisions + sector` and the normalised
//! covariance eigenvalues sorted ascending.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, RigidTransform};

pub const DESCRIPTOR_DIM: usize = 66;
pub const GESTALT_BINS: usize = 32;

/// Eigenvalue ratio below which the horizontal spread has no usable direction.
pub const ISOTROPY_RATIO: f64 = 1.05;

const SKEW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyPose {
    pose: RigidTransform,
    /// Set when the horizontal spread was too round to pick an axis and
    /// `x` fell back to the global x axis.
    pub isotropic: bool,
}

impl KeyPose {
    pub fn new(pose: RigidTransform, isotropic: bool) -> Self {
        Self { pose, isotropic }
    }

    /// Key pose at `position` with the orientation rotated by `yaw` about z.
    pub fn from_position_yaw(position: Point, yaw: f64) -> Self {
        Self::new(RigidTransform::from_yaw(yaw, position.coords), false)
    }

    pub fn position(&self) -> Point {
        Point::from(*self.pose.translation())
    }

    pub fn orientation(&self) -> &Matrix3<f64> {
        self.pose.rotation()
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.pose.rotation().column(0).into()
    }

    /// Key-pose frame → world.
    pub fn pose(&self) -> &RigidTransform {
        &self.pose
    }

    /// World point expressed in the key-pose frame.
    pub fn to_local(&self, p: &Point) -> Vector3<f64> {
        self.pose.rotation().transpose() * (p - self.position())
    }

    /// The same key pose seen from a frame related by `g`. The result keeps
    /// `z` = up only when `g` is a pure yaw + translation.
    pub fn transformed(&self, g: &RigidTransform) -> KeyPose {
        KeyPose {
            pose: g.compose(&self.pose),
            isotropic: self.isotropic,
        }
    }
}

/// Component-wise median; the mean of the two middle values for even counts.
pub fn component_median(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let mut buf: Vec<f64> = Vec::with_capacity(points.len());
    let mut out = [0.0; 3];
    for (axis, slot) in out.iter_mut().enumerate() {
        buf.clear();
        buf.extend(points.iter().map(|p| p[axis]));
        *slot = median_in_place(&mut buf);
    }
    Some(Point::new(out[0], out[1], out[2]))
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

pub fn extract_keypose(points: &[Point]) -> Result<KeyPose> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            got: points.len(),
            need: 3,
        });
    }
    let position = component_median(points).unwrap();

    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (sxx, sxy, syy) = (sxx / n, sxy / n, syy / n);
    let half_trace = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy).sqrt();
    let (lmax, lmin) = (half_trace + disc, half_trace - disc);

    let isotropic = lmax <= 0.0 || lmax < ISOTROPY_RATIO * lmin.max(0.0);
    let x_axis = if isotropic {
        Vector3::x()
    } else {
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let mut x = Vector3::new(theta.cos(), theta.sin(), 0.0);
        let third: f64 = points
            .iter()
            .map(|p| {
                let s = (p.x - mx) * x.x + (p.y - my) * x.y;
                s * s * s
            })
            .sum::<f64>()
            / n;
        let flip = if third.abs() >= SKEW_EPS {
            third < 0.0
        } else if x.x.abs() > 1e-12 {
            x.x < 0.0
        } else {
            x.y < 0.0
        };
        if flip {
            x = -x;
        }
        x
    };
    let z_axis = Vector3::z();
    let y_axis = z_axis.cross(&x_axis);
    let rotation = Matrix3::from_columns(&[x_axis, y_axis, z_axis]);
    Ok(KeyPose {
        pose: RigidTransform::from_parts(rotation, position.coords),
        isotropic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenFeatures {
    pub planarity: f64,
    pub cylindricality: f64,
}

/// Planarity and cylindricality from the normalised covariance eigenvalues
/// `λ₁ ≤ λ₂ ≤ λ₃` (summing to one).
pub fn eigen_features(points: &[Point]) -> Result<EigenFeatures> {
    let l = normalized_eigenvalues(points)?;
    let f = EigenFeatures {
        planarity: l[1] - l[0],
        cylindricality: l[2] - l[1],
    };
    assert!(
        f.planarity >= 0.0
            && f.cylindricality >= 0.0
            && f.planarity + f.cylindricality <= 1.0 + 1e-12,
        "eigen features out of range: {f:?}"
    );
    Ok(f)
}

/// Ascending, non-negative, summing to one; all zeros for a degenerate cloud.
pub fn normalized_eigenvalues(points: &[Point]) -> Result<[f64; 3]> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            got: points.len(),
            need: 3,
        });
    }
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords)
        / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut l = [
        eig.eigenvalues[0].max(0.0),
        eig.eigenvalues[1].max(0.0),
        eig.eigenvalues[2].max(0.0),
    ];
    l.sort_by(f64::total_cmp);
    let sum: f64 = l.iter().sum();
    // spreads at rounding level of the coordinates count as zero
    let scale = points
        .iter()
        .map(|p| p.coords.abs().max())
        .fold(0.0, f64::max);
    if sum <= 0.0 || sum <= 1e-20 * scale * scale {
        log::warn!("degenerate covariance over {} points", points.len());
        return Ok([0.0; 3]);
    }
    Ok([l[0] / sum, l[1] / sum, l[2] / sum])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestaltParams {
    pub radius: f64,
    pub radial_divisions: usize,
    pub azimuthal_divisions: usize,
}

impl Default for GestaltParams {
    fn default() -> Self {
        Self {
            radius: 2.0,
            radial_divisions: 4,
            azimuthal_divisions: 8,
        }
    }
}

impl GestaltParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidParams("gestalt radius must be > 0".into()));
        }
        if self.radial_divisions == 0 || self.azimuthal_divisions == 0 {
            return Err(Error::InvalidParams(
                "gestalt divisions must be >= 1".into(),
            ));
        }
        if self.radial_divisions * self.azimuthal_divisions != GESTALT_BINS {
            return Err(Error::InvalidParams(format!(
                "gestalt grid must have {GESTALT_BINS} bins, got {}×{}",
                self.radial_divisions, self.azimuthal_divisions
            )));
        }
        Ok(())
    }

    /// Bin of a key-pose-frame offset, or `None` when outside the radius.
    pub fn bin_of(&self, local: &Vector3<f64>) -> Option<usize> {
        let r = local.x.hypot(local.y);
        if r >= self.radius {
            return None;
        }
        let ring = ((r / (self.radius / self.radial_divisions as f64)) as usize)
            .min(self.radial_divisions - 1);
        let mut theta = (-local.y).atan2(local.x);
        if theta < 0.0 {
            theta += TAU;
        }
        let sector = ((theta / (TAU / self.azimuthal_divisions as f64)) as usize)
            .min(self.azimuthal_divisions - 1);
        Some(ring * self.azimuthal_divisions + sector)
    }
}

#[derive(Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f64; DESCRIPTOR_DIM]);

impl Descriptor {
    pub fn zeros() -> Self {
        Descriptor([0.0; DESCRIPTOR_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn bin(&self, b: usize) -> (f64, f64) {
        (self.0[2 * b], self.0[2 * b + 1])
    }

    pub fn planarity(&self) -> f64 {
        self.0[64]
    }

    pub fn cylindricality(&self) -> f64 {
        self.0[65]
    }

    pub fn l2_distance(&self, other: &Descriptor) -> f64 {
        crate::index::squared_distance(&self.0, &other.0).sqrt()
    }
}

impl std::fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<&[f64]> for Descriptor {
    type Error = Error;

    fn try_from(v: &[f64]) -> Result<Self> {
        let arr: [f64; DESCRIPTOR_DIM] = v.try_into().map_err(|_| Error::WidthMismatch {
            expected: DESCRIPTOR_DIM,
            got: v.len(),
        })?;
        Ok(Descriptor(arr))
    }
}

impl Serialize for Descriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Descriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Descriptor::try_from(v.as_slice()).map_err(serde::de::Error::custom)
    }
}

/// Full descriptor: Gestalt height statistics about `keypose` plus the two
/// eigenvalue features.
pub fn gestalt_descriptor(
    points: &[Point],
    keypose: &KeyPose,
    params: &GestaltParams,
) -> Result<Descriptor> {
    params.validate()?;
    let eig = eigen_features(points)?;

    let local_z: Vec<(usize, f64)> = points
        .iter()
        .filter_map(|p| {
            let l = keypose.to_local(p);
            params.bin_of(&l).map(|b| (b, l.z))
        })
        .collect();
    if local_z.is_empty() {
        log::warn!("no segment point within the gestalt radius of its key pose");
    }

    let mut count = [0usize; GESTALT_BINS];
    let mut sum = [0.0f64; GESTALT_BINS];
    for &(b, z) in &local_z {
        count[b] += 1;
        sum[b] += z;
    }
    let mut mean = [0.0f64; GESTALT_BINS];
    for b in 0..GESTALT_BINS {
        if count[b] > 0 {
            mean[b] = sum[b] / count[b] as f64;
        }
    }
    let mut sq = [0.0f64; GESTALT_BINS];
    for &(b, z) in &local_z {
        let d = z - mean[b];
        sq[b] += d * d;
    }

    let mut d = Descriptor::zeros();
    for b in 0..GESTALT_BINS {
        if count[b] > 0 {
            d.0[2 * b] = mean[b];
            d.0[2 * b + 1] = sq[b] / count[b] as f64;
        }
    }
    d.0[64] = eig.planarity;
    d.0[65] = eig.cylindricality;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_odd_and_even() {
        let pts = [
            Point::new(3.0, 0.0, 1.0),
            Point::new(1.0, 5.0, 2.0),
            Point::new(2.0, 4.0, 9.0),
        ];
        assert_eq!(component_median(&pts).unwrap(), Point::new(2.0, 4.0, 2.0));
        let pts = [
            Point::new(1.0, 0.0, 0.0),
            Point::new(2.0, 0.0, 0.0),
            Point::new(4.0, 0.0, 0.0),
            Point::new(10.0, 0.0, 0.0),
        ];
        assert_eq!(component_median(&pts).unwrap().x, 3.0);
    }

    #[test]
    fn keypose_needs_three_points() {
        let pts = [Point::origin(), Point::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            extract_keypose(&pts),
            Err(Error::TooFewPoints { got: 2, need: 3 })
        ));
    }

    #[test]
    fn symmetric_elongated_along_y() {
        let mut pts = Vec::new();
        for i in -10..=10 {
            for j in -2..=2 {
                pts.push(Point::new(j as f64 * 0.1, i as f64 * 0.3, 0.0));
                pts.push(Point::new(j as f64 * 0.1, i as f64 * 0.3, 1.0));
            }
        }
        let kp = extract_keypose(&pts).unwrap();
        assert!((kp.position() - Point::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        assert!(!kp.isotropic);
        // symmetric cloud: skew vanishes and the fallback picks +y
        assert!((kp.x_axis() - Vector3::y()).norm() < 1e-9);
        let r = kp.orientation();
        assert_eq!(r.column(2), Vector3::z());
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skew_picks_the_long_tail() {
        // mass near the origin with a tail towards -x
        let mut pts = Vec::new();
        for i in 0..50 {
            pts.push(Point::new(0.01 * i as f64, 0.0, 0.0));
        }
        for i in 0..5 {
            pts.push(Point::new(-3.0 - i as f64, 0.05, 0.0));
        }
        let kp = extract_keypose(&pts).unwrap();
        assert!(
            (kp.x_axis() + Vector3::x()).norm() < 1e-2,
            "{:?}",
            kp.x_axis()
        );
    }

    #[test]
    fn round_cloud_is_isotropic() {
        let pts: Vec<Point> = (0..36)
            .map(|i| {
                let a = i as f64 * TAU / 36.0;
                Point::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let kp = extract_keypose(&pts).unwrap();
        assert!(kp.isotropic);
        assert_eq!(kp.x_axis(), Vector3::x());
        let vertical: Vec<Point> = (0..5).map(|i| Point::new(1.0, 1.0, i as f64)).collect();
        assert!(extract_keypose(&vertical).unwrap().isotropic);
    }

    #[test]
    fn eigen_archetypes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let line: Vec<Point> = (0..2000)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), 0.0, 0.0))
            .collect();
        let f = eigen_features(&line).unwrap();
        assert!(f.planarity.abs() < 1e-9 && (f.cylindricality - 1.0).abs() < 1e-9);

        let same: Vec<Point> = (0..10).map(|_| Point::new(1.0, 2.0, 3.0)).collect();
        let f = eigen_features(&same).unwrap();
        assert_eq!((f.planarity, f.cylindricality), (0.0, 0.0));
    }

    #[test]
    fn single_point_binning() {
        let kp = KeyPose::from_position_yaw(Point::new(10.0, 5.0, 2.0), 0.0);
        // three points so eigen features are defined; two fall outside the radius
        let pts = [
            Point::new(11.0, 5.0, 2.7),
            Point::new(20.0, 5.0, 0.0),
            Point::new(10.0, 15.0, 0.0),
        ];
        let d = gestalt_descriptor(&pts, &kp, &GestaltParams::default()).unwrap();
        let bin = 2 * 8; // ring 2, sector 0
        assert_eq!(d.bin(bin).1, 0.0);
        assert!((d.bin(bin).0 - 0.7).abs() < 1e-12);
        for b in (0..GESTALT_BINS).filter(|&b| b != bin) {
            assert_eq!(d.bin(b), (0.0, 0.0));
        }
    }

    #[test]
    fn azimuth_runs_clockwise() {
        let p = GestaltParams::default();
        // +x is sector 0, -y (clockwise from +x seen from above) is sector 2
        assert_eq!(p.bin_of(&Vector3::new(0.1, 0.0, 0.0)), Some(0));
        assert_eq!(p.bin_of(&Vector3::new(0.1, -0.01, 0.0)), Some(0));
        assert_eq!(p.bin_of(&Vector3::new(0.0, -0.1, 0.0)), Some(2));
        assert_eq!(p.bin_of(&Vector3::new(0.1, 0.01, 0.0)), Some(7));
        assert_eq!(p.bin_of(&Vector3::new(1.9, 0.0, 0.0)), Some(3 * 8));
        assert_eq!(p.bin_of(&Vector3::new(2.0, 0.0, 0.0)), None);
    }

    #[test]
    fn gestalt_params_must_give_32_bins() {
        let mut p = GestaltParams::default();
        assert!(p.validate().is_ok());
        p.radial_divisions = 2;
        p.azimuthal_divisions = 16;
        assert!(p.validate().is_ok());
        p.azimuthal_divisions = 8;
        assert!(p.validate().is_err());
        p = GestaltParams {
            radius: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn all_points_outside_radius() {
        let kp = KeyPose::from_position_yaw(Point::origin(), 0.0);
        let pts = [
            Point::new(5.0, 0.0, 0.0),
            Point::new(0.0, 5.0, 1.0),
            Point::new(5.0, 5.0, 2.0),
        ];
        let d = gestalt_descriptor(&pts, &kp, &GestaltParams::default()).unwrap();
        assert!(d.0[..64].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn descriptor_serde_rejects_wrong_width() {
        let d = Descriptor::zeros();
        let json = serde_json::to_string(&d).unwrap();
        let back: Descriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Descriptor>("[1.0, 2.0]").is_err());
    }
}
