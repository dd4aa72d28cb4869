//! Rotation, intrinsics and homography primitives.
//!
//! Image coordinates are normalized: the frame spans `[0, 1]` on both axes
//! and the nominal principal point sits at `(0.5, 0.5)`. Quaternions are
//! stored scalar-first, multiply with the Hamilton convention and are kept in
//! the `w >= 0` hemisphere so that `q` and `-q` have a single representation.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous coordinates with `|w|` below this are treated as points at infinity.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-9;
const MIN_DETERMINANT: f64 = 1e-12;

/// Raw Hamilton product on scalar-first 4-arrays, no normalization.
#[inline]
pub(crate) fn hamilton(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

#[inline]
pub(crate) fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

#[inline]
pub(crate) fn conj4(a: &[f64; 4]) -> [f64; 4] {
    [a[0], -a[1], -a[2], -a[3]]
}

/// Rotation angle in `[0, pi]` encoded by a (not necessarily canonical) unit 4-array.
#[inline]
pub(crate) fn angle_of(q: &[f64; 4]) -> f64 {
    let v = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    2.0 * v.atan2(q[0].abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes and canonicalizes an arbitrary non-zero 4-vector.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        // already-unit input is kept bit-exact so text round trips are lossless
        if (n - 1.0).abs() <= 1e-12 {
            return Ok(Self::canonical_from([w, x, y, z]));
        }
        Ok(Self::canonical_from([w / n, x / n, y / n, z / n]))
    }

    /// Renormalizes a 4-array that is known to be close to unit length.
    pub(crate) fn from_array_unchecked(q: [f64; 4]) -> Self {
        let n = dot4(&q, &q).sqrt();
        Self::canonical_from([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
    }

    fn canonical_from(q: [f64; 4]) -> Self {
        let flip = if q[0] != 0.0 {
            q[0] < 0.0
        } else {
            // w == 0: break the tie on the first non-zero vector component
            q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        let s = if flip { -1.0 } else { 1.0 };
        Self {
            w: s * q[0] + 0.0,
            x: s * q[1] + 0.0,
            y: s * q[2] + 0.0,
            z: s * q[3] + 0.0,
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !angle.is_finite() || !n.is_finite() {
            return Err(Error::InvalidArgument("non-finite axis or angle".into()));
        }
        if n == 0.0 {
            if angle == 0.0 {
                return Ok(Self::identity());
            }
            return Err(Error::InvalidArgument(
                "zero rotation axis with non-zero angle".into(),
            ));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Ok(Self::from_array_unchecked([
            c,
            s * axis[0] / n,
            s * axis[1] / n,
            s * axis[2] / n,
        ]))
    }

    /// Exponential map of a rotation vector (axis scaled by angle).
    pub fn exp(v: &Vector3<f64>) -> Self {
        let theta = v.norm();
        if theta < 1e-12 {
            return Self::from_array_unchecked([1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z]);
        }
        let (s, c) = (0.5 * theta).sin_cos();
        let k = s / theta;
        Self::from_array_unchecked([c, k * v.x, k * v.y, k * v.z])
    }

    /// Rotation vector with angle in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let v = Vector3::new(self.x, self.y, self.z);
        let vn = v.norm();
        if vn < 1e-15 {
            return 2.0 * v / self.w;
        }
        let angle = 2.0 * vn.atan2(self.w);
        v * (angle / vn)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        let a = self.to_array();
        dot4(&a, &a).sqrt()
    }

    /// Hamilton product `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_array_unchecked(hamilton(&self.to_array(), &other.to_array()))
    }

    pub fn inverse(&self) -> Self {
        Self::canonical_from(conj4(&self.to_array()))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot4(&self.to_array(), &other.to_array())
    }

    /// Spherical angle between two orientations, in `[0, pi]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        angle_of(&hamilton(&self.to_array(), &conj4(&other.to_array())))
    }

    /// Rotation angle of this quaternion, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        angle_of(&self.to_array())
    }

    /// Spherical linear interpolation along the shorter arc; `s = 0` gives `self`.
    pub fn slerp(&self, other: &Self, s: f64) -> Self {
        let a = self.to_array();
        let mut b = other.to_array();
        let mut d = dot4(&a, &b);
        if d < 0.0 {
            b = [-b[0], -b[1], -b[2], -b[3]];
            d = -d;
        }
        let (ka, kb) = if d > 1.0 - 1e-12 {
            (1.0 - s, s)
        } else {
            let theta = d.min(1.0).acos();
            let st = theta.sin();
            (((1.0 - s) * theta).sin() / st, (s * theta).sin() / st)
        };
        Self::from_array_unchecked([
            ka * a[0] + kb * b[0],
            ka * a[1] + kb * b[1],
            ka * a[2] + kb * b[2],
            ka * a[3] + kb * b[3],
        ])
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix() * v
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;
    fn try_from(q: [f64; 4]) -> Result<Self> {
        Self::from_wxyz(q[0], q[1], q[2], q[3])
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

/// 2D point in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    /// Chebyshev (max-axis) norm.
    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Shift of the virtual projection center, in normalized image units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrincipalOffset {
    pub tx: f64,
    pub ty: f64,
}

impl PrincipalOffset {
    pub const ZERO: PrincipalOffset = PrincipalOffset { tx: 0.0, ty: 0.0 };

    pub const fn new(tx: f64, ty: f64) -> Self {
        Self { tx, ty }
    }

    /// Finite and within the unit sanity bound on each axis.
    pub fn is_valid(&self) -> bool {
        self.tx.is_finite() && self.ty.is_finite() && self.tx.abs() <= 1.0 && self.ty.abs() <= 1.0
    }

    pub fn lerp(&self, other: &Self, s: f64) -> Self {
        Self::new(
            self.tx + s * (other.tx - self.tx),
            self.ty + s * (other.ty - self.ty),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: UnitQuaternion,
    pub offset: PrincipalOffset,
}

impl CameraPose {
    pub const fn new(rotation: UnitQuaternion, offset: PrincipalOffset) -> Self {
        Self { rotation, offset }
    }

    pub const fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), PrincipalOffset::ZERO)
    }

    /// Pose of the physical camera: the given rotation, no principal shift.
    pub const fn real(rotation: UnitQuaternion) -> Self {
        Self::new(rotation, PrincipalOffset::ZERO)
    }

    /// Slerp on rotation and lerp on offset with one shared parameter.
    pub fn interpolate(&self, other: &Self, s: f64) -> Self {
        Self::new(
            self.rotation.slerp(&other.rotation, s),
            self.offset.lerp(&other.offset, s),
        )
    }

    /// Left-multiplied rotation increment plus offset increment.
    pub fn retract(&self, rot: &Vector3<f64>, dtx: f64, dty: f64) -> Self {
        Self::new(
            UnitQuaternion::exp(rot).compose(&self.rotation),
            PrincipalOffset::new(self.offset.tx + dtx, self.offset.ty + dty),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(focal: f64) -> Result<Self> {
        let k = Self {
            focal,
            cx: 0.5,
            cy: 0.5,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidArgument("non-finite principal point".into()));
        }
        Ok(())
    }
}

/// Row-major 3x3 projective map with `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite homography entries".into()));
        }
        let h22 = m[(2, 2)];
        if h22.abs() < MIN_DETERMINANT {
            return Err(Error::Singular(format!(
                "cannot normalize homography with h22 = {h22:e}"
            )));
        }
        let mut m = m / h22;
        m[(2, 2)] = 1.0;
        let det = m.determinant();
        if det.abs() <= MIN_DETERMINANT {
            return Err(Error::Singular(format!("homography determinant {det:e}")));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Singular("homography not invertible".into()))?;
        Self::new(inv)
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        Self::new(self.m * other.m)
    }

    /// Perspective divide of `H [x, y, 1]^T`.
    pub fn project(&self, p: Point2) -> Result<Point2> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z < MIN_HOMOGENEOUS_W {
            return Err(Error::PointAtInfinity { w: v.z });
        }
        Ok(Point2::new(v.x / v.z, v.y / v.z))
    }

    /// Largest absolute entry-wise difference to the identity.
    pub fn distance_to_identity(&self) -> f64 {
        (self.m - Matrix3::identity()).amax()
    }
}

/// `K = [[f, 0, cx + tx], [0, f, cy + ty], [0, 0, 1]]`.
pub fn intrinsics_matrix(intr: &Intrinsics, offset: &PrincipalOffset) -> Homography {
    Homography {
        m: Matrix3::new(
            intr.focal,
            0.0,
            intr.cx + offset.tx,
            0.0,
            intr.focal,
            intr.cy + offset.ty,
            0.0,
            0.0,
            1.0,
        ),
    }
}

/// Inverse of [`intrinsics_matrix`] in closed form.
pub(crate) fn intrinsics_inverse(intr: &Intrinsics, offset: &PrincipalOffset) -> Matrix3<f64> {
    let f = intr.focal;
    Matrix3::new(
        1.0 / f,
        0.0,
        -(intr.cx + offset.tx) / f,
        0.0,
        1.0 / f,
        -(intr.cy + offset.ty) / f,
        0.0,
        0.0,
        1.0,
    )
}

/// Real-to-virtual map `K_v R_v (K_r R_r)^-1`.
pub fn projection_homography(
    virt: &CameraPose,
    real: &CameraPose,
    intr_v: &Intrinsics,
    intr_r: &Intrinsics,
) -> Result<Homography> {
    let kv = intrinsics_matrix(intr_v, &virt.offset);
    let rv = virt.rotation.to_rotation_matrix();
    let rr_t = real.rotation.to_rotation_matrix().transpose();
    let kr_inv = intrinsics_inverse(intr_r, &real.offset);
    Homography::new(kv.m * rv * rr_t * kr_inv)
}

pub fn project_point(p: Point2, h: &Homography) -> Result<Point2> {
    h.project(p)
}

/// Sampling grid for a downstream compositor: row-major vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMesh {
    pub rows: usize,
    pub cols: usize,
    pub vertices: Vec<Point2>,
}

impl WarpMesh {
    pub fn vertex(&self, row: usize, col: usize) -> Point2 {
        self.vertices[row * self.cols + col]
    }
}

/// Uniform `rows x cols` grid over the unit (virtual) square, mapped through
/// `H^-1` into real-frame sampling coordinates.
pub fn warp_mesh(h: &Homography, rows: usize, cols: usize) -> Result<WarpMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "warp mesh needs at least 2x2 vertices, got {rows}x{cols}"
        )));
    }
    let inv = h.inverse()?;
    let mut vertices = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let v = i as f64 / (rows - 1) as f64;
        for j in 0..cols {
            let u = j as f64 / (cols - 1) as f64;
            vertices.push(inv.project(Point2::new(u, v))?);
        }
    }
    Ok(WarpMesh {
        rows,
        cols,
        vertices,
    })
}
