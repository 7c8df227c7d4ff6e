//! Rigid transforms, twists and wrenches.
//!
//! Orientations are unit quaternions stored `(w, x, y, z)`. Twists are
//! local-world-aligned: linear velocity of the body origin and angular
//! velocity, both expressed in world axes. Rotation errors are rotation
//! vectors (axis times angle).

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_rotation(orientation: UnitQuaternion<f64>) -> Self {
        Self::new(Vec3::zeros(), orientation)
    }

    /// Intrinsic XYZ roll-pitch-yaw, the URDF convention.
    pub fn from_xyz_rpy(xyz: Vec3, rpy: Vec3) -> Self {
        Self::new(xyz, UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle))
    }

    /// Parses the flat `[px, py, pz, qw, qx, qy, qz]` layout. A quaternion
    /// that is not unit to within 1e-12 is renormalized; a zero or
    /// non-finite quaternion is rejected.
    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Json("pose contains non-finite values".into()));
        }
        let q = Quaternion::new(a[3], a[4], a[5], a[6]);
        let n = q.norm();
        if n < 1e-6 {
            return Err(Error::Json("pose quaternion has zero norm".into()));
        }
        let q = if (n - 1.0).abs() <= 1e-12 { q } else { q / n };
        Ok(Self::new(Vec3::new(a[0], a[1], a[2]), UnitQuaternion::new_unchecked(q)))
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.canonical().orientation;
        [self.position.x, self.position.y, self.position.z, q.w, q.i, q.j, q.k]
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(&self) -> Self {
        let q = self.orientation.quaternion();
        let orientation = if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-*q)
        } else {
            self.orientation
        };
        Self::new(self.position, orientation)
    }

    /// `self ∘ other`: `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + self.orientation * other.position,
            renormalize(self.orientation * other.orientation),
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    /// Position and rotation distance, for approximate comparisons.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let e = pose_error_log(self, other);
        (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm())
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array(a).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Layout `(linear; angular)`.
    pub fn from_vector(v: &Vec6) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vec6 {
        let mut v = Vec6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        v
    }
}

/// Contact-local wrench: z is the outward surface normal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }
}

impl Serialize for Wrench {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Wrench {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 6]>::deserialize(d)?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("wrench contains non-finite values"));
        }
        Ok(Wrench::from_array(a))
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Rotation vector of a unit quaternion, angle in `[0, π]`.
///
/// At exactly π the axis sign is fixed so that its largest-magnitude
/// component is positive.
pub fn quat_log(q: &UnitQuaternion<f64>) -> Vec3 {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        // exp(θ/2 n) ≈ (1, θ/2 n)
        return 2.0 * v;
    }
    let angle = 2.0 * s.atan2(w);
    let mut axis = v / s;
    if w == 0.0 {
        let imax = axis.iamax();
        if axis[imax] < 0.0 {
            axis = -axis;
        }
    }
    axis * angle
}

pub fn quat_exp(rv: &Vec3) -> UnitQuaternion<f64> {
    let angle = rv.norm();
    if angle < 1e-12 {
        let q = Quaternion::new(1.0, 0.5 * rv.x, 0.5 * rv.y, 0.5 * rv.z);
        return UnitQuaternion::new_normalize(q);
    }
    let half = 0.5 * angle;
    let v = rv * (half.sin() / angle);
    UnitQuaternion::new_normalize(Quaternion::new(half.cos(), v.x, v.y, v.z))
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// World-frame error `(Δp; Δθ)` taking `current` to `target`.
pub fn pose_error_log(current: &Pose, target: &Pose) -> Vec6 {
    let dp = target.position - current.position;
    let dth = if target.orientation == current.orientation {
        Vec3::zeros()
    } else {
        quat_log(&(target.orientation * current.orientation.inverse()))
    };
    let mut e = Vec6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&dp);
    e.fixed_rows_mut::<3>(3).copy_from(&dth);
    e
}

pub fn pose_integrate(p: &Pose, v: &Twist, dt: f64) -> Pose {
    debug_assert!(dt >= 0.0);
    let rv = v.angular * dt;
    let orientation = if rv == Vec3::zeros() {
        p.orientation
    } else {
        renormalize(quat_exp(&rv) * p.orientation)
    };
    Pose::new(p.position + v.linear * dt, orientation)
}

pub fn skew(v: &Vec3) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
