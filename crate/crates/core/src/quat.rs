//! Quaternion algebra and the matrix operators used by the constraint
//! Jacobians.
//!
//! Components are ordered `(w, x, y, z)` everywhere, matching the 4-vector
//! map [`Quaternion::vec4`]. Translations and directions are pure
//! quaternions in millimeters; rotations are unit quaternions.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};

/// Norm tolerance accepted by [`UnitQuaternion::new`] before rejecting.
pub const UNIT_CONSTRUCT_TOL: f64 = 1e-6;

/// Norm tolerance guaranteed by a constructed [`UnitQuaternion`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A general quaternion `w + x î + y ĵ + z k̂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_squared(self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Maps into a column vector in `(w, x, y, z)` order.
    pub fn vec4(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Left Hamilton operator: `vec4(h · h') = hamilton_plus(h) · vec4(h')`.
    #[rustfmt::skip]
    pub fn hamilton_plus(self) -> Matrix4<f64> {
        let Self { w, x, y, z } = self;
        Matrix4::new(
            w, -x, -y, -z,
            x,  w, -z,  y,
            y,  z,  w, -x,
            z, -y,  x,  w,
        )
    }

    /// Right Hamilton operator: `vec4(h · h') = hamilton_minus(h') · vec4(h)`.
    #[rustfmt::skip]
    pub fn hamilton_minus(self) -> Matrix4<f64> {
        let Self { w, x, y, z } = self;
        Matrix4::new(
            w, -x, -y, -z,
            x,  w,  z, -y,
            y, -z,  w,  x,
            z,  y, -x,  w,
        )
    }

    /// Imaginary part as a pure quaternion.
    pub fn imaginary(self) -> PureQuaternion {
        PureQuaternion::new(self.x, self.y, self.z)
    }

    /// Converts into a pure quaternion, rejecting a non-negligible real part.
    pub fn try_pure(self) -> Result<PureQuaternion> {
        if self.w.abs() > 1e-12 {
            return Err(Error::NotPure {
                what: "quaternion",
                real: self.w,
            });
        }
        Ok(self.imaginary())
    }
}

impl std::ops::Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, rhs: Quaternion) -> Quaternion {
        let (a, b) = (self, rhs);
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl std::ops::Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w + rhs.w,
            self.x + rhs.x,
            self.y + rhs.y,
            self.z + rhs.z,
        )
    }
}

impl std::ops::Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w - rhs.w,
            self.x - rhs.x,
            self.y - rhs.y,
            self.z - rhs.z,
        )
    }
}

/// Conjugation matrix `C4 = diag(1, −1, −1, −1)`, so that
/// `vec4(h*) = c4() · vec4(h)`.
pub fn c4() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0))
}

/// A quaternion with zero real part; carries translations and directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureQuaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PureQuaternion {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub const fn i() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub const fn j() -> Self {
        Self::new(0.0, 1.0, 0.0)
    }

    pub const fn k() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn as_quaternion(self) -> Quaternion {
        Quaternion::new(0.0, self.x, self.y, self.z)
    }

    pub fn vec4(self) -> Vector4<f64> {
        Vector4::new(0.0, self.x, self.y, self.z)
    }

    pub fn dot(self, rhs: PureQuaternion) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: PureQuaternion) -> PureQuaternion {
        PureQuaternion::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Result<PureQuaternion> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "cannot normalize a zero vector".into(),
            ));
        }
        Ok(self.scale(1.0 / n))
    }

    /// Cross-product operator: `vec4(h × h') = cross_matrix(h) · vec4(h')`
    /// and `vec4(h × h') = cross_matrix(h')ᵀ · vec4(h)` for pure `h'`.
    #[rustfmt::skip]
    pub fn cross_matrix(self) -> Matrix4<f64> {
        let Self { x, y, z } = self;
        Matrix4::new(
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0,  -z,   y,
            0.0,   z, 0.0,  -x,
            0.0,  -y,   x, 0.0,
        )
    }
}

impl std::ops::Add for PureQuaternion {
    type Output = PureQuaternion;
    fn add(self, rhs: PureQuaternion) -> PureQuaternion {
        PureQuaternion::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for PureQuaternion {
    type Output = PureQuaternion;
    fn sub(self, rhs: PureQuaternion) -> PureQuaternion {
        PureQuaternion::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Neg for PureQuaternion {
    type Output = PureQuaternion;
    fn neg(self) -> PureQuaternion {
        PureQuaternion::new(-self.x, -self.y, -self.z)
    }
}

/// A rotation. Construction normalizes inputs within [`UNIT_CONSTRUCT_TOL`]
/// of unit norm and rejects anything farther, which keeps integration drift
/// bounded without masking genuinely broken inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub fn new(q: Quaternion) -> Result<Self> {
        let n = q.norm();
        if (n - 1.0).abs() > UNIT_CONSTRUCT_TOL {
            return Err(Error::NotUnit {
                what: "rotation quaternion",
                norm: n,
            });
        }
        Ok(Self(q.scale(1.0 / n)))
    }

    pub fn identity() -> Self {
        Self(Quaternion::identity())
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: PureQuaternion, angle: f64) -> Result<Self> {
        let u = axis.normalized()?;
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Self(Quaternion::new(c, s * u.x, s * u.y, s * u.z)))
    }

    pub fn quaternion(self) -> Quaternion {
        self.0
    }

    pub fn conjugate(self) -> Self {
        Self(self.0.conjugate())
    }

    pub fn compose(self, rhs: UnitQuaternion) -> Self {
        // Renormalize so long kinematic chains cannot accumulate drift past
        // UNIT_NORM_TOL.
        let q = self.0 * rhs.0;
        Self(q.scale(1.0 / q.norm()))
    }

    /// Rotates a pure quaternion: `r p r*`.
    pub fn rotate_vector(self, p: PureQuaternion) -> PureQuaternion {
        let r = self.0;
        (r * p.as_quaternion() * r.conjugate()).imaginary()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(self) -> f64 {
        let w = self.0.w.abs().min(1.0);
        2.0 * w.acos()
    }
}
