//! Quaternion algebra and the rotation-plus-scaling operator on 3-D vectors.
//!
//! A relation unit is an arbitrary nonzero quaternion `Q = |Q| q`. It acts on an
//! entity unit `w` as `O(Q) w = |Q| R(q) w`, where `R(q)` is the rotation given by
//! the sandwich product `q W q⁻¹`. The inverse operator is `|Q|⁻¹ R(q⁻¹)`.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `‖(b, c, d)‖ / |Q|` the rotation axis is treated as undefined.
pub const AXIS_EPSILON: f64 = 1e-12;

/// Allowed deviation from unit norm for operations that require a unit quaternion.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// `a + b i + c j + d k`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    /// Pure quaternion `x i + y j + z k`.
    pub fn pure(w: Vec3) -> Self {
        Self::new(0.0, w.x, w.y, w.z)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.b, self.c, self.d)
    }

    pub fn norm_sq(self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.a, -self.b, -self.c, -self.d)
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.a * o.a + self.b * o.b + self.c * o.c + self.d * o.d
    }

    pub fn is_finite(self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        hamilton(self, rhs)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scaled(-1.0)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul_vec(&self, w: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * w.x + m[0][1] * w.y + m[0][2] * w.z,
            m[1][0] * w.x + m[1][1] * w.y + m[1][2] * w.z,
            m[2][0] * w.x + m[2][1] * w.y + m[2][2] * w.z,
        )
    }

    /// `selfᵀ w` without materializing the transpose.
    pub fn mul_vec_transposed(&self, w: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * w.x + m[1][0] * w.y + m[2][0] * w.z,
            m[0][1] * w.x + m[1][1] * w.y + m[2][1] * w.z,
            m[0][2] * w.x + m[1][2] * w.y + m[2][2] * w.z,
        )
    }

    pub fn matmul(&self, rhs: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|l| self.0[i][l] * rhs.0[l][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn scaled(&self, s: f64) -> Mat3 {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|v| *v *= s);
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Axis/angle/scale view of a nonzero quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngleScaling {
    pub scale: f64,
    /// Rotation magnitude in `[0, 2π)`.
    pub psi: f64,
    /// Polar angle of the axis in `[0, π]`.
    pub theta: f64,
    /// Azimuth of the axis in `[0, 2π)`.
    pub phi: f64,
    /// Set when the axis is undefined (`sin(ψ/2)` below [`AXIS_EPSILON`]); θ and φ are then 0.
    pub degenerate: bool,
}

impl AxisAngleScaling {
    pub fn axis(&self) -> Vec3 {
        axis_from_angles(self.theta, self.phi)
    }

    /// Rebuilds `scale · unit_quat(ψ, θ, φ)`.
    pub fn to_quaternion(&self) -> Quaternion {
        unit_quat(self.psi, self.theta, self.phi).scaled(self.scale)
    }
}

pub fn axis_from_angles(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

/// Hamilton product `q1 ⊗ q2`.
pub fn hamilton(q1: Quaternion, q2: Quaternion) -> Quaternion {
    let Quaternion {
        a: a1,
        b: b1,
        c: c1,
        d: d1,
    } = q1;
    let Quaternion {
        a: a2,
        b: b2,
        c: c2,
        d: d2,
    } = q2;
    Quaternion::new(
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    )
}

/// `cos(ψ/2) + sin(ψ/2)(v_x i + v_y j + v_z k)` with `v = (sinθ cosφ, sinθ sinφ, cosθ)`.
pub fn unit_quat(psi: f64, theta: f64, phi: f64) -> Quaternion {
    let (s, c) = (psi / 2.0).sin_cos();
    let v = axis_from_angles(theta, phi);
    Quaternion::new(c, s * v.x, s * v.y, s * v.z)
}

/// Multiplicative inverse: the conjugate divided by the squared norm.
pub fn quat_inverse(q: Quaternion) -> Result<Quaternion> {
    let n2 = q.norm_sq();
    if n2 == 0.0 {
        return Err(Error::InvalidOperator);
    }
    Ok(q.conjugate().scaled(1.0 / n2))
}

fn require_unit(q: Quaternion) -> Result<()> {
    let n = q.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotUnit { norm: n });
    }
    Ok(())
}

fn require_nonzero(q: Quaternion) -> Result<f64> {
    let n = q.norm();
    if n == 0.0 {
        return Err(Error::InvalidOperator);
    }
    Ok(n)
}

/// Vector part of `q W q⁻¹` for the pure quaternion `W` built from `w`.
pub fn rotate_sandwich(q: Quaternion, w: Vec3) -> Result<Vec3> {
    require_unit(q)?;
    let inv = quat_inverse(q)?;
    Ok(hamilton(hamilton(q, Quaternion::pure(w)), inv).vector())
}

/// The quadratic form `M(Q)` with `M(Q) w = Q W Q̄` (vector part); equals `|Q|² R(Q/|Q|)`.
pub fn quadratic_form(q: Quaternion) -> Mat3 {
    let Quaternion { a, b, c, d } = q;
    let (aa, bb, cc, dd) = (a * a, b * b, c * c, d * d);
    Mat3([
        [
            aa + bb - cc - dd,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            aa - bb + cc - dd,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            aa - bb - cc + dd,
        ],
    ])
}

/// Rotation matrix agreeing with the sandwich product `q W q⁻¹`.
pub fn rotation_matrix(q: Quaternion) -> Result<Mat3> {
    require_unit(q)?;
    Ok(quadratic_form(q).scaled(1.0 / q.norm_sq()))
}

/// `O(Q) w = |Q| R(Q/|Q|) w`.
pub fn apply_operator(q: Quaternion, w: Vec3) -> Result<Vec3> {
    let n = require_nonzero(q)?;
    Ok(quadratic_form(q).mul_vec(w) * (1.0 / n))
}

/// `O(Q)⁻¹ w = |Q|⁻¹ R(q⁻¹) w`.
pub fn apply_inverse_operator(q: Quaternion, w: Vec3) -> Result<Vec3> {
    let n = require_nonzero(q)?;
    Ok(quadratic_form(q).mul_vec_transposed(w) * (1.0 / (n * n * n)))
}

/// Operator applying `q1` first and then `q2`: `q2 ⊗ q1`.
pub fn compose_operators(q2: Quaternion, q1: Quaternion) -> Result<Quaternion> {
    require_nonzero(q1)?;
    require_nonzero(q2)?;
    Ok(hamilton(q2, q1))
}

/// Splits `Q` into scale, rotation magnitude and axis angles.
pub fn decompose(q: Quaternion) -> Result<AxisAngleScaling> {
    let scale = require_nonzero(q)?;
    let vec = q.vector();
    let s = vec.norm();
    let mut psi = 2.0 * s.atan2(q.a);
    if psi >= TAU {
        psi -= TAU;
    }
    if s / scale < AXIS_EPSILON {
        return Ok(AxisAngleScaling {
            scale,
            psi,
            theta: 0.0,
            phi: 0.0,
            degenerate: true,
        });
    }
    let v = vec * (1.0 / s);
    let theta = v.z.clamp(-1.0, 1.0).acos();
    let mut phi = v.y.atan2(v.x);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi -= TAU;
    }
    Ok(AxisAngleScaling {
        scale,
        psi,
        theta,
        phi,
        degenerate: false,
    })
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}
