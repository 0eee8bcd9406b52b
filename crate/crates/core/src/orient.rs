//! Rotation algebra and the musculoskeletal-to-robot orientation chain.
//!
//! Shoulder poses come out of the musculoskeletal model as a plane of
//! elevation `theta` and an elevation `phi`. The robot wants intrinsic
//! Z-Y'-X'' Euler angles. The chain is
//!
//! 1. `(theta, phi)` to intrinsic Y-X'-Y'' angles `(theta, -phi, axial)`,
//! 2. Y-X'-Y'' angles to a unit quaternion,
//! 3. the quaternion to intrinsic Z-Y'-X'' angles.
//!
//! Frame: `x` anterior, `y` superior, `z` lateral.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Row-major 3x3 rotation matrix.
pub type Mat3 = [[f64; 3]; 3];

const UNIT_NORM_TOLERANCE: f64 = 1e-6;
const GIMBAL_COS_THRESHOLD: f64 = 1e-7;

/// Two-DoF shoulder pose in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngles {
    /// Plane of elevation (azimuth).
    pub theta: f64,
    /// Elevation.
    pub phi: f64,
}

impl JointAngles {
    pub const NEUTRAL: JointAngles = JointAngles { theta: 0.0, phi: 0.0 };

    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    pub fn from_degrees(theta: f64, phi: f64) -> Self {
        Self::new(theta.to_radians(), phi.to_radians())
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.phi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EulerConvention {
    /// Y-X'-Y'' intrinsic (ISB shoulder convention).
    YxyIntrinsic,
    /// Z-Y'-X'' intrinsic (robot frame).
    ZyxIntrinsic,
}

impl EulerConvention {
    fn axes(self) -> [Axis; 3] {
        match self {
            EulerConvention::YxyIntrinsic => [Axis::Y, Axis::X, Axis::Y],
            EulerConvention::ZyxIntrinsic => [Axis::Z, Axis::Y, Axis::X],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerTriple {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub convention: EulerConvention,
}

impl EulerTriple {
    pub fn new(a1: f64, a2: f64, a3: f64, convention: EulerConvention) -> Self {
        Self { a1, a2, a3, convention }
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.a1, self.a2, self.a3]
    }

    /// Fails if the triple is not in `convention`.
    pub fn expect(&self, convention: EulerConvention) -> Result<&Self> {
        if self.convention == convention {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!(
                "expected {convention:?} angles, got {:?}",
                self.convention
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
    Z,
}

/// Unit quaternion `w + xi + yj + zk`, Hamilton convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes `(w, x, y, z)`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        ensure_finite("quaternion", &[w, x, y, z])?;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 {
            return Err(Error::InvalidArgument("zero quaternion".into()));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        ensure_finite("axis", &axis)?;
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Err(Error::InvalidArgument("zero rotation axis".into()));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    fn about(axis: Axis, angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        match axis {
            Axis::X => Self {
                w: c,
                x: s,
                y: 0.0,
                z: 0.0,
            },
            Axis::Y => Self {
                w: c,
                x: 0.0,
                y: s,
                z: 0.0,
            },
            Axis::Z => Self {
                w: c,
                x: 0.0,
                y: 0.0,
                z: s,
            },
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Picks the representative with `w > 0` (or, when `w == 0`, the first
    /// nonzero vector component positive).
    pub fn canonical(&self) -> Self {
        let lead = [self.w, self.x, self.y, self.z]
            .into_iter()
            .find(|c| *c != 0.0)
            .unwrap_or(0.0);
        if lead < 0.0 {
            self.negated()
        } else {
            *self
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Self { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.to_matrix(), v)
    }
}

pub fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Step 1: musculoskeletal angles to ISB Y-X'-Y'' angles, X' negated.
pub fn ms_to_isb(q: JointAngles, axial: f64) -> Result<EulerTriple> {
    ensure_finite("joint angles", &[q.theta, q.phi, axial])?;
    Ok(EulerTriple::new(q.theta, -q.phi, axial, EulerConvention::YxyIntrinsic))
}

/// Step 2: intrinsic Euler angles to the canonical unit quaternion.
pub fn euler_to_quat(e: &EulerTriple) -> Result<UnitQuaternion> {
    ensure_finite("euler angles", &e.angles())?;
    let [a, b, c] = e.convention.axes();
    let q = UnitQuaternion::about(a, e.a1)
        .mul(&UnitQuaternion::about(b, e.a2))
        .mul(&UnitQuaternion::about(c, e.a3));
    Ok(q.canonical())
}

/// Step 3: unit quaternion to intrinsic Z-Y'-X'' angles.
///
/// The middle angle lies in `[-pi/2, pi/2]`. At gimbal lock the last angle is
/// pinned to zero and the whole residual yaw goes into the first.
pub fn quat_to_euler_zyx(q: &UnitQuaternion) -> Result<EulerTriple> {
    ensure_finite("quaternion", &[q.w, q.x, q.y, q.z])?;
    let norm = q.norm();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::InvalidArgument(format!("quaternion norm {norm} is not unit")));
    }
    let m = q.to_matrix();
    let cos_pitch = m[0][0].hypot(m[1][0]);
    let pitch = (-m[2][0]).atan2(cos_pitch);
    let (yaw, roll) = if cos_pitch < GIMBAL_COS_THRESHOLD {
        ((-m[0][1]).atan2(m[1][1]), 0.0)
    } else {
        (m[1][0].atan2(m[0][0]), m[2][1].atan2(m[2][2]))
    };
    Ok(EulerTriple::new(yaw, pitch, roll, EulerConvention::ZyxIntrinsic))
}

/// Full chain from musculoskeletal angles to robot-frame Z-Y'-X'' angles,
/// with the unsensed axial rotation held at zero.
pub fn ms_to_robot(q: JointAngles) -> Result<EulerTriple> {
    let isb = ms_to_isb(q, 0.0)?;
    quat_to_euler_zyx(&euler_to_quat(&isb)?)
}

/// Rotation carrying the upper arm from neutral to pose `q`.
pub fn arm_rotation(q: JointAngles) -> Result<UnitQuaternion> {
    euler_to_quat(&ms_to_isb(q, 0.0)?)
}

/// Largest elementwise difference between two matrices.
pub fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}
