//! Rigid-body geometry shared by every other module.
//!
//! Rotations are stored as unit quaternions with a non-negative scalar part.
//! Euler angles use the intrinsic Z-Y-X convention (`R = Rz(yaw) Ry(pitch) Rx(roll)`)
//! and appear only at the least-squares and network boundaries.

use core::f64::consts::PI;
use core::ops::{Add, AddAssign, Mul, Neg, Sub};

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;

/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * (a / two_pi).round();
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; the zero vector is returned unchanged.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn get(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Roll, pitch and yaw in radians, intrinsic Z-Y-X.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn wrapped(self) -> Self {
        Self::new(wrap_angle(self.roll), wrap_angle(self.pitch), wrap_angle(self.yaw))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Unit quaternion `(w, x, y, z)` with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a rotation from raw quaternion components, normalizing and
    /// canonicalizing the sign. Components that are already unit length to a
    /// few ulps are kept bit for bit, so normalization is idempotent.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = Rotation { w, x, y, z };
        let n2 = w * w + x * x + y * y + z * z;
        if w >= 0.0 && (n2 - 1.0).abs() <= 8.0 * f64::EPSILON {
            q
        } else {
            q.renormalized()
        }
    }

    pub fn quaternion(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::from_quaternion(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::Z, angle)
    }

    /// Rotation vector (axis times angle) exponential.
    pub fn exp(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            return Self::from_quaternion(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z);
        }
        Self::from_axis_angle(v, angle)
    }

    pub fn renormalized(self) -> Self {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Rotation { w: self.w * s, x: self.x * s, y: self.y * s, z: self.z * s }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(&self) -> Self {
        Rotation { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        // v' = v + 2w (q x v) + 2 q x (q x v)
        let q = Vec3::new(self.x, self.y, self.z);
        let t = q.cross(v) * 2.0;
        v + t * self.w + q.cross(t)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Converts a proper orthonormal matrix to a quaternion (Shepperd's method).
    pub fn from_matrix(m: &Mat3) -> Self {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
        };
        Self::from_quaternion(q[0], q[1], q[2], q[3])
    }

    /// Builds the rotation whose columns are the given orthonormal axes.
    pub fn from_axes(x: Vec3, y: Vec3, z: Vec3) -> Self {
        Self::from_matrix(&[[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]])
    }

    pub fn from_euler(e: EulerAngles) -> Self {
        let (sr, cr) = (0.5 * e.roll).sin_cos();
        let (sp, cp) = (0.5 * e.pitch).sin_cos();
        let (sy, cy) = (0.5 * e.yaw).sin_cos();
        Self::from_quaternion(
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        )
    }

    pub fn to_euler(&self) -> EulerAngles {
        let m = self.to_matrix();
        let pitch = (-m[2][0]).atan2((m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt());
        let roll = m[2][1].atan2(m[2][2]);
        let yaw = m[1][0].atan2(m[0][0]);
        EulerAngles::new(wrap_angle(roll), pitch, wrap_angle(yaw))
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let d = self.inverse() * *other;
        2.0 * Vec3::new(d.x, d.y, d.z).norm().atan2(d.w.abs())
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, o: Rotation) -> Rotation {
        Rotation {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
        .renormalized()
    }
}

pub fn euler_to_rotation(e: EulerAngles) -> Rotation {
    Rotation::from_euler(e)
}

pub fn rotation_to_euler(r: Rotation) -> EulerAngles {
    r.to_euler()
}

/// Rigid transform mapping body coordinates into the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rot: Rotation,
    pub trans: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rot: Rotation::IDENTITY, trans: Vec3::ZERO };

    pub const fn new(rot: Rotation, trans: Vec3) -> Self {
        Self { rot, trans }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::IDENTITY, t)
    }

    /// `[x, y, z, roll, pitch, yaw]`.
    pub fn from_vector6(v: [f64; 6]) -> Self {
        Self::new(
            Rotation::from_euler(EulerAngles::new(v[3], v[4], v[5])),
            Vec3::new(v[0], v[1], v[2]),
        )
    }

    pub fn to_vector6(&self) -> [f64; 6] {
        let e = self.rot.to_euler();
        [self.trans.x, self.trans.y, self.trans.z, e.roll, e.pitch, e.yaw]
    }

    pub fn compose(&self, b: &Pose) -> Pose {
        Pose::new(self.rot * b.rot, self.rot.rotate(b.trans) + self.trans)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rot.inverse();
        Pose::new(inv, -inv.rotate(self.trans))
    }

    pub fn transform_point(&self, x: Vec3) -> Vec3 {
        self.rot.rotate(x) + self.trans
    }

    pub fn is_finite(&self) -> bool {
        self.trans.is_finite() && self.rot.quaternion().iter().all(|c| c.is_finite())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn transform_point(p: &Pose, x: Vec3) -> Vec3 {
    p.transform_point(x)
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

pub fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        a[0][0] * v.x + a[0][1] * v.y + a[0][2] * v.z,
        a[1][0] * v.x + a[1][1] * v.y + a[1][2] * v.z,
        a[2][0] * v.x + a[2][1] * v.y + a[2][2] * v.z,
    )
}
