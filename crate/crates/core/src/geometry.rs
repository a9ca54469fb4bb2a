//! Points, clouds and rigid transforms.
//!
//! Everything lives in a right-handed frame with `z` pointing up. Coordinates
//! are `f64` metres.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = nalgebra::Point3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            frame_id: String::new(),
        }
    }

    pub fn with_frame_id(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    /// Sub-cloud made of the given indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            frame_id: self.frame_id.clone(),
        }
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Callers guarantee `rotation` is a proper rotation (e.g. it came out of
    /// nalgebra's rotation types or a product of valid rotations).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!(check_rotation(&rotation).is_ok());
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), translation)
    }

    /// Rotation about `z` by `yaw` radians, followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::from_parts(
            *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        )
    }

    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self::from_parts(
            *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        )
    }

    /// Quaternion given scalar-last as `[qx, qy, qz, qw]`. The quaternion is
    /// normalised; norms further than 1e-3 from one are rejected.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidTransform(format!(
                "quaternion norm {norm} is not unit"
            )));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Self::new(*unit.to_rotation_matrix().matrix(), translation)
    }

    /// Rotation as a unit quaternion, scalar-last `[qx, qy, qz, qw]`, with
    /// `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle of `R` in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidTransform("non-finite rotation".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(Error::InvalidTransform(format!(
            "rotation not orthonormal (max |RᵀR - I| = {err:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::InvalidTransform(format!("det(R) = {det}")));
    }
    Ok(())
}

/// Serialised form: translation plus scalar-last quaternion.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    translation: [f64; 3],
    quaternion: [f64; 4],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        TransformRepr {
            translation: [t.translation.x, t.translation.y, t.translation.z],
            quaternion: t.quaternion(),
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        RigidTransform::from_quaternion(r.quaternion, Vector3::from(r.translation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        RigidTransform::from_euler(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
            Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-5.0..5.0),
            ),
        )
    }

    #[test]
    fn identity_is_neutral() {
        let t = RigidTransform::from_euler(0.3, -0.2, 1.1, Vector3::new(1.0, 2.0, 3.0));
        let id = RigidTransform::identity();
        assert_eq!(id.compose(&t), t);
        assert_eq!(t.compose(&id), t);
    }

    #[test]
    fn yaw_quarter_turn() {
        let t = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = t.apply(&Point::new(1.0, 0.0, 0.0));
        assert!((p - Point::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.01;
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
        // reflection
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = random_transform(&mut rng);
            let inv = t.inverse();
            let id = t.compose(&inv);
            assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
            assert!(id.translation().norm() < 1e-9);
            for _ in 0..100 {
                let p = Point::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                );
                assert!((inv.apply(&t.apply(&p)) - p).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn composition_is_associative_on_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let p = Point::new(rng.random(), rng.random(), rng.random());
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            assert!((lhs - rhs).norm() < 1e-9);
            assert!(check_rotation(a.compose(&b).rotation()).is_ok());
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            let back = RigidTransform::from_quaternion(t.quaternion(), *t.translation()).unwrap();
            assert!((back.rotation() - t.rotation()).abs().max() < 1e-12);
        }
        assert!(RigidTransform::from_quaternion([0.0, 0.0, 0.0, 2.0], Vector3::zeros()).is_err());
    }

    #[test]
    fn serde_uses_quaternion_form() {
        let t = RigidTransform::from_yaw(0.5, Vector3::new(1.0, -2.0, 0.25));
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("quaternion"));
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert!((back.rotation() - t.rotation()).abs().max() < 1e-12);
        assert_eq!(back.translation(), t.translation());
    }
}
