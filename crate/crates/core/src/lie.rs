//! SE(3) algebra used throughout the pipeline.
//!
//! Tangent vectors are ordered `(rho, phi)`: translational part first, then
//! rotational part. Perturbations are applied on the left, `T = exp(xi) * T0`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angles below this use Taylor series for the trigonometric coefficients.
const SMALL_ANGLE: f64 = 1e-2;

/// `log` refuses rotations closer than this to pi.
pub const PI_GUARD: f64 = 1e-6;

/// Order of the BCH series behind [`inv_left_jacobian`].
pub const BCH_ORDER: usize = 2;

/// Rigid transform on SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Element of se(3) stored as `(rho, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist(pub Vector6<f64>);

/// Symmetric 6x6 covariance over twist coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance6(pub Matrix6<f64>);

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist(Vector6::from_column_slice(v))
    }

    pub fn rho(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn phi(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist(self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Matrix3::identity(), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Pose::new(q.to_rotation_matrix().into_inner(), t)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Adjoint acting on `(rho, phi)` twists: `exp(Ad_T xi) = T exp(xi) T^-1`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(hat(&self.translation) * self.rotation));
        ad
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
    }

    /// Largest deviation of `R^T R` from identity plus determinant error.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Projects the rotation back onto SO(3) through the polar decomposition.
    pub fn reorthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose::new(r, self.translation)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl Covariance6 {
    pub fn zeros() -> Self {
        Covariance6(Matrix6::zeros())
    }

    pub fn identity_scaled(s: f64) -> Self {
        Covariance6(Matrix6::identity() * s)
    }

    pub fn from_diagonal(d: &[f64; 6]) -> Self {
        Covariance6(Matrix6::from_diagonal(&Vector6::from_column_slice(d)))
    }

    pub fn symmetrized(m: Matrix6<f64>) -> Self {
        Covariance6((m + m.transpose()) * 0.5)
    }

    pub fn eigenvalues(&self) -> Vector6<f64> {
        SymmetricEigen::new(self.0).eigenvalues
    }

    pub fn trace_eigen_sum(&self) -> f64 {
        self.eigenvalues().sum()
    }

    /// Ratio of largest to smallest absolute eigenvalue.
    pub fn condition(&self) -> f64 {
        condition_number(&self.0)
    }

    pub fn inverse(&self) -> Result<Matrix6<f64>> {
        let cond = self.condition();
        if !(cond < 1e12) {
            return Err(Error::NonInvertibleCovariance { condition: cond });
        }
        self.0
            .try_inverse()
            .ok_or(Error::NonInvertibleCovariance { condition: cond })
    }

    /// Covariance of `A x` when `x` has this covariance.
    pub fn transformed(&self, a: &Matrix6<f64>) -> Self {
        Covariance6::symmetrized(a * self.0 * a.transpose())
    }

    pub fn is_valid(&self) -> bool {
        let sym = (self.0 - self.0.transpose()).amax() <= 1e-12 * self.0.amax().max(1.0);
        sym && self.eigenvalues().iter().all(|&l| l >= -1e-12)
    }
}

pub fn condition_number(m: &Matrix6<f64>) -> f64 {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Coefficients (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3).
fn so3_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            s / theta,
            (1.0 - c) / (theta * theta),
            (theta - s) / (theta * theta * theta),
        )
    }
}

pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (a, b, _) = so3_coefficients(theta);
    let k = hat(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (_, b, c) = so3_coefficients(theta);
    let k = hat(phi);
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_inv_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let d = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    let k = hat(phi);
    Matrix3::identity() - k * 0.5 + k * k * d
}

pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let theta = rotation_angle(r);
    if !theta.is_finite() {
        return Err(Error::InvalidArgument("non-finite rotation".into()));
    }
    if theta > std::f64::consts::PI - PI_GUARD {
        return Err(Error::DegenerateRotation { angle: theta });
    }
    let w = vee(&(r - r.transpose())) * 0.5;
    if theta < 3.0 {
        let (a, _, _) = so3_coefficients(theta);
        return Ok(w / a);
    }
    // Near pi the antisymmetric part is tiny; recover the axis from the
    // symmetric part and take only its sign from `w`.
    let c = theta.cos();
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let diag = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
    let i = diag.imax();
    let mut axis = b.column(i).into_owned();
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Exponential map se(3) -> SE(3).
pub fn exp(xi: &Twist) -> Result<Pose> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument("non-finite twist".into()));
    }
    Ok(exp_unchecked(xi))
}

pub(crate) fn exp_unchecked(xi: &Twist) -> Pose {
    let phi = xi.phi();
    let r = so3_exp(&phi);
    let t = so3_left_jacobian(&phi) * xi.rho();
    Pose::new(r, t)
}

/// Logarithm map SE(3) -> se(3).
pub fn log(t: &Pose) -> Result<Twist> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument("non-finite pose".into()));
    }
    let phi = so3_log(&t.rotation)?;
    let rho = so3_inv_left_jacobian(&phi) * t.translation;
    Ok(Twist::new(rho, phi))
}

/// Geodesic interpolation `a * exp(alpha * log(a^-1 b))`.
pub fn interpolate(a: &Pose, b: &Pose, alpha: f64) -> Result<Pose> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            value: alpha,
            min: 0.0,
            max: 1.0,
        });
    }
    let rel = log(&(a.inverse() * *b))?;
    Ok(*a * exp_unchecked(&rel.scaled(alpha)))
}

/// Matrix `ad(xi)` with `exp(ad(xi)) = Ad(exp(xi))`.
pub fn ad(xi: &Twist) -> Matrix6<f64> {
    let rho_hat = hat(&xi.rho());
    let phi_hat = hat(&xi.phi());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&phi_hat);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi_hat);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&rho_hat);
    m
}

/// Exact left Jacobian of SE(3): `exp(xi + d) ~ exp(J(xi) d) exp(xi)`.
pub fn left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let phi = xi.phi();
    let j = so3_left_jacobian(&phi);
    let q = q_block(&xi.rho(), &phi);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    m
}

fn q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let p = hat(phi);
    let r = hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// Second-order BCH approximation of the inverse left Jacobian,
/// `I - ad(xi)/2 + ad(xi)^2/12`.
pub fn inv_left_jacobian(xi: &Twist) -> Result<Matrix6<f64>> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument("non-finite twist".into()));
    }
    let a = ad(xi);
    Ok(Matrix6::identity() - a * 0.5 + a * a / 12.0)
}
