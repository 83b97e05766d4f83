//! Fixed-size SE(3) / se(3) kernel.
//!
//! Twists and wrenches are plain 6-vectors ordered `(angular; linear)`, i.e.
//! `[ω; v_O]` for twists and `[τ; f_O]` for wrenches, so that the pairing
//! `⟨F, v⟩ = Fᵀv` holds. Transforms are stored as `(R, p)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::Se3Error;

/// Element of se(3) in `(ω; v)` order.
pub type Twist = Vector6<f64>;
/// Element of se(3)* in `(τ; f)` order.
pub type Wrench = Vector6<f64>;
/// 6×6 operator on twists or wrenches (adjoints, inertias).
pub type SpatialMatrix = Matrix6<f64>;

/// Largest symmetric part tolerated by [`vee`].
pub const VEE_SYMMETRY_TOL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-9;

/// Skew-symmetric matrix with `hat(w) * x == w.cross(x)`.
#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`]. Fails if `m` is not skew-symmetric within
/// [`VEE_SYMMETRY_TOL`].
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, Se3Error> {
    let sym = (m + m.transpose()) * 0.5;
    let asym = sym.amax();
    if asym > VEE_SYMMETRY_TOL {
        return Err(Se3Error::NotSkewSymmetric(asym));
    }
    Ok(Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

#[inline]
pub fn angular(x: &Vector6<f64>) -> Vector3<f64> {
    x.fixed_rows::<3>(0).into_owned()
}

#[inline]
pub fn linear(x: &Vector6<f64>) -> Vector3<f64> {
    x.fixed_rows::<3>(3).into_owned()
}

#[inline]
pub fn stack(top: &Vector3<f64>, bottom: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

fn blocks(a: &Matrix3<f64>, b: &Matrix3<f64>, c: &Matrix3<f64>, d: &Matrix3<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(b);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(c);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(d);
    m
}

/// Rigid transform `g = (R, p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SpatialTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SpatialTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a transform after checking `RᵀR = I` and `det R = 1` to `1e-12`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Se3Error> {
        let g = Self { rotation, translation };
        g.check()?;
        Ok(g)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn check(&self) -> Result<(), Se3Error> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if ortho > 1e-12 || (det - 1.0).abs() > 1e-12 {
            return Err(Se3Error::NotRotation { orthogonality: ortho, determinant: det });
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `Ad_g = [R 0; p̂R R]`.
    pub fn adjoint(&self) -> SpatialMatrix {
        let r = &self.rotation;
        blocks(r, &Matrix3::zeros(), &(hat(&self.translation) * r), r)
    }

    /// `Ad_g⁻¹ = Ad_{g⁻¹} = [Rᵀ 0; -Rᵀp̂ Rᵀ]`, formed blockwise.
    pub fn adjoint_inv(&self) -> SpatialMatrix {
        let rt = self.rotation.transpose();
        blocks(&rt, &Matrix3::zeros(), &(-(rt * hat(&self.translation))), &rt)
    }

    /// `Ad_g⁻ᵀ = [R p̂R; 0 R]`, which maps body wrenches to spatial wrenches.
    pub fn adjoint_inv_transpose(&self) -> SpatialMatrix {
        let r = &self.rotation;
        blocks(r, &(hat(&self.translation) * r), &Matrix3::zeros(), r)
    }

    /// `Ad_g · x` without forming the 6×6 matrix.
    pub fn act_twist(&self, x: &Twist) -> Twist {
        let w = self.rotation * angular(x);
        let v = self.rotation * linear(x) + self.translation.cross(&w);
        stack(&w, &v)
    }

    /// 4×4 homogeneous view, for display and debugging.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

impl Mul for SpatialTransform {
    type Output = SpatialTransform;

    fn mul(self, rhs: SpatialTransform) -> SpatialTransform {
        Mul::mul(&self, &rhs)
    }
}

impl Mul<&SpatialTransform> for &SpatialTransform {
    type Output = SpatialTransform;

    fn mul(self, rhs: &SpatialTransform) -> SpatialTransform {
        SpatialTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl fmt::Display for SpatialTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_homogeneous())
    }
}

/// `exp(Ŝ q)` for a screw `S = (s; n)`.
///
/// Rodrigues for the rotation block and the left Jacobian of SO(3) for the
/// translation. Falls back to second-order Taylor coefficients when
/// `‖s‖·|q| < 1e-9`.
pub fn exp_twist(screw: &Twist, q: f64) -> SpatialTransform {
    let w = angular(screw) * q;
    let v = linear(screw) * q;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b, c) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let (sin, cos) = theta.sin_cos();
        (sin / theta, (1.0 - cos) / theta2, (theta - sin) / (theta2 * theta))
    };
    let wh = hat(&w);
    let wh2 = wh * wh;
    let rotation = Matrix3::identity() + wh * a + wh2 * b;
    let jac = Matrix3::identity() + wh * b + wh2 * c;
    SpatialTransform { rotation, translation: jac * v }
}

/// `ad_v = [ω̂ 0; v̂ ω̂]`.
pub fn ad(v: &Twist) -> SpatialMatrix {
    let w = hat(&angular(v));
    blocks(&w, &Matrix3::zeros(), &hat(&linear(v)), &w)
}

/// `ad_{v1} v2` computed with cross products.
#[inline]
pub fn ad_mul(v1: &Twist, v2: &Twist) -> Twist {
    let w1 = angular(v1);
    let w2 = angular(v2);
    stack(&w1.cross(&w2), &(w1.cross(&linear(v2)) + linear(v1).cross(&w2)))
}

/// `ad^D_F = [τ̂ f̂; f̂ 0]`, so that `ad_vᵀ F = ad^D_F v`.
pub fn ad_dual(f: &Wrench) -> SpatialMatrix {
    let fh = hat(&linear(f));
    blocks(&hat(&angular(f)), &fh, &fh, &Matrix3::zeros())
}

/// `ad^D_F v = ad_vᵀ F` computed with cross products.
#[inline]
pub fn ad_dual_mul(f: &Wrench, v: &Twist) -> Wrench {
    let tau = angular(f);
    let force = linear(f);
    stack(&(tau.cross(&angular(v)) + force.cross(&linear(v))), &force.cross(&angular(v)))
}
