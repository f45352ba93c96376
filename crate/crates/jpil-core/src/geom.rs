//! Geometry primitives shared by every stage: points, orientations, rigid
//! transforms, bounding boxes and the headset state.
//!
//! All coordinates live in a right-handed East-North-Up Cartesian frame with
//! x = East, y = North, z = Up, in meters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3D point in an ENU Cartesian frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_coords(v: Vector3<f64>) -> Self {
        Point3 { x: v.x, y: v.y, z: v.z }
    }

    /// Displacement `self - other`.
    pub fn sub(&self, other: &Point3) -> Vector3<f64> {
        self.coords() - other.coords()
    }

    pub fn add(&self, v: &Vector3<f64>) -> Point3 {
        Point3::from_coords(self.coords() + v)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.sub(other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<Vector3<f64>> for Point3 {
    fn from(v: Vector3<f64>) -> Self {
        Point3::from_coords(v)
    }
}

impl From<Point3> for Vector3<f64> {
    fn from(p: Point3) -> Self {
        p.coords()
    }
}

/// Normalize an angle in degrees to the canonical interval `[-180, 180)`.
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(360.0);
    if a >= 180.0 {
        a -= 360.0;
    }
    a
}

/// Headset orientation as roll / pitch / yaw in degrees, each normalized to
/// `[-180, 180)`.
///
/// The rotation convention (world ← camera) is
/// `R = Rz(-yaw) · Rx(pitch) · Ry(roll)` over the ENU axes: yaw turns the
/// camera from North toward East (compass-like), pitch tilts it up about the
/// camera's right axis, roll banks it about the viewing axis. At identity the
/// camera looks North with East to its right and Up overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationENU {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl OrientationENU {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        OrientationENU {
            roll: normalize_deg(roll),
            pitch: normalize_deg(pitch),
            yaw: normalize_deg(yaw),
        }
    }

    pub fn identity() -> Self {
        OrientationENU { roll: 0.0, pitch: 0.0, yaw: 0.0 }
    }

    /// Rotation matrix mapping camera-frame vectors into the world (ENU) frame.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sr, cr) = self.roll.to_radians().sin_cos();
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        let (sy, cy) = (-self.yaw.to_radians()).sin_cos();
        // Rz(-yaw) * Rx(pitch) * Ry(roll), expanded.
        Matrix3::new(
            cy * cr - sy * sp * sr,
            -sy * cp,
            cy * sr + sy * sp * cr,
            sy * cr + cy * sp * sr,
            cy * cp,
            sy * sr - cy * sp * cr,
            -cp * sr,
            sp,
            cp * cr,
        )
    }

    /// Recover roll/pitch/yaw from a rotation matrix produced by
    /// [`OrientationENU::rotation`]. Near gimbal lock (|pitch| = 90°) roll is
    /// fixed to zero and yaw absorbs the remaining rotation.
    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        let sp = r[(2, 1)].clamp(-1.0, 1.0);
        let pitch = sp.asin();
        let cp = pitch.cos();
        if cp.abs() > 1e-9 {
            let roll = (-r[(2, 0)]).atan2(r[(2, 2)]);
            let yaw = -(-r[(0, 1)]).atan2(r[(1, 1)]);
            OrientationENU::new(roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees())
        } else {
            // Gimbal lock: only roll+yaw combined is observable.
            let yaw = -r[(0, 2)].atan2(r[(0, 0)]);
            OrientationENU::new(0.0, pitch.to_degrees(), yaw.to_degrees())
        }
    }
}

const ROTATION_TOL: f64 = 1e-9;

/// A rigid transform: orthonormal rotation plus translation, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Build from parts, validating that `rotation` is orthonormal with
    /// determinant +1 (both within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "R^T R deviates from identity by {dev:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!("determinant {det} != +1")));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: t }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Apply to a point: `R p + t`.
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_coords(self.rotation * p.coords() + self.translation)
    }

    /// Rotate a free vector (no translation).
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Composition: `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// The 4x4 homogeneous matrix, row-major.
    pub fn matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Result<Self> {
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        RigidTransform::new(rotation, translation)
    }
}

/// Axis-aligned bounding box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::Validation(format!(
                "bounding box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(BoundingBox { min, max })
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut min = first;
        let mut max = first;
        for p in it {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            min.z = min.z.min(p.z);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
            max.z = max.z.max(p.z);
        }
        Some(BoundingBox { min, max })
    }

    /// Inclusive containment on both faces.
    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn center(&self) -> Point3 {
        Point3::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max.sub(&self.min)
    }

    pub fn longest_side(&self) -> f64 {
        let e = self.extents();
        e.x.max(e.y).max(e.z)
    }

    pub fn inflate(&self, margin: f64) -> BoundingBox {
        BoundingBox {
            min: Point3::new(self.min.x - margin, self.min.y - margin, self.min.z - margin),
            max: Point3::new(self.max.x + margin, self.max.y + margin, self.max.z + margin),
        }
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min: Point3::new(
                self.min.x.min(other.min.x),
                self.min.y.min(other.min.y),
                self.min.z.min(other.min.z),
            ),
            max: Point3::new(
                self.max.x.max(other.max.x),
                self.max.y.max(other.max.y),
                self.max.z.max(other.max.z),
            ),
        }
    }
}

/// Headset pose in the session frame plus the gaze ray used for measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadsetState {
    pub position: Point3,
    pub orientation: OrientationENU,
    pub gaze: Vector3<f64>,
}

impl HeadsetState {
    /// `gaze` is normalized; a zero gaze vector is rejected.
    pub fn new(position: Point3, orientation: OrientationENU, gaze: Vector3<f64>) -> Result<Self> {
        let n = gaze.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateDirection);
        }
        Ok(HeadsetState { position, orientation, gaze: gaze / n })
    }
}
