//! Rigid transforms in SE(3) and the exponential/logarithm maps.
//!
//! Tangent vectors are ordered `[ω; v]` (rotation first). Increments are
//! applied on the left: `T ← exp(ξ) · T`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

use super::GeometryError;

/// Smallest rotation angle for which `se3_log` refuses to answer.
pub const LOG_DOMAIN_LIMIT: f64 = std::f64::consts::PI - 1e-6;

/// Rigid transform: unit quaternion rotation plus translation in meters.
///
/// The quaternion is kept normalized with a non-negative scalar part so that
/// every rotation has exactly one stored representation.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose(q=[{:.9}, {:.9}, {:.9}, {:.9}], t=[{:.9}, {:.9}, {:.9}])",
            q.w, q.i, q.j, q.k, self.translation.x, self.translation.y, self.translation.z
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let raw = q.into_inner();
    let raw = if raw.w < 0.0 { -raw } else { raw };
    // Renormalizing an already unit quaternion moves its last bits, which
    // would make text round trips lossy.
    if (raw.norm() - 1.0).abs() <= 1e-12 {
        UnitQuaternion::new_unchecked(raw)
    } else {
        UnitQuaternion::from_quaternion(raw)
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`; the
    /// quaternion is normalized unless it is unit to within 1e-12.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::Degenerate(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::Degenerate("non-finite translation".into()));
        }
        Ok(Self::new(UnitQuaternion::new_unchecked(q), translation))
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self::new(UnitQuaternion::from_axis_angle(&axis, angle), translation)
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.into_inner() * other.rotation.into_inner();
        Pose {
            rotation: canonical(UnitQuaternion::from_quaternion(q)),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: canonical(inv),
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// Adjoint in `[ω; v]` ordering: `T · exp(ξ) · T⁻¹ = exp(Ad_T ξ)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn exp(xi: &Vector6<f64>) -> Pose {
        se3_exp(xi)
    }

    pub fn log(&self) -> Result<Vector6<f64>, GeometryError> {
        se3_log(self)
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

/// Skew-symmetric cross-product matrix.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn se3_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

// (1 - cos θ)/θ² and (θ - sin θ)/θ³ with series near zero.
fn so3_coefficients(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b) = so3_coefficients(theta);
    let w = hat(omega);
    Matrix3::identity() + a * w + b * w * w
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let c = if theta < 1e-4 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * w + c * w * w
}

// Coupling block of the SE(3) left Jacobian (rotation part `phi`,
// translation part `rho`).
fn se3_q_block(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let p = hat(phi);
    let r = hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = p * r * p;
    let (c1, c2, c3) = if theta < 1e-3 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
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
    // Q = ½ρ^ + c1 (φ^ρ^ + ρ^φ^ + φ^ρ^φ^)
    //       + c2 (φ^φ^ρ^ + ρ^φ^φ^ − 3 φ^ρ^φ^)
    //       + c3 (φ^ρ^φ^φ^ + φ^φ^ρ^φ^)
    0.5 * r + c1 * (pr + rp + prp) + c2 * (p * pr + rp * p - 3.0 * prp) + c3 * (prp * p + p * prp)
}

/// Left Jacobian of SE(3) in `[ω; v]` ordering.
pub fn se3_left_jacobian(xi: &Vector6<f64>) -> Matrix6<f64> {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q_block(&omega, &v));
    out
}

/// Inverse of the SE(3) left Jacobian: `log(exp(δ)·exp(ξ)) ≈ ξ + J⁻¹(ξ) δ`.
pub fn se3_left_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    let jinv = so3_left_jacobian_inv(&omega);
    let q = se3_q_block(&omega, &v);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-jinv * q * jinv));
    out
}

/// Exponential map from `[ω; v]` to a rigid transform.
pub fn se3_exp(xi: &Vector6<f64>) -> Pose {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    let rotation = UnitQuaternion::from_scaled_axis(omega);
    let translation = so3_left_jacobian(&omega) * v;
    Pose::new(rotation, translation)
}

/// Logarithm map; fails when the rotation angle is within 1e-6 of π.
pub fn se3_log(p: &Pose) -> Result<Vector6<f64>, GeometryError> {
    let q = p.rotation.quaternion();
    let imag = q.imag();
    let s = imag.norm();
    let theta = 2.0 * s.atan2(q.w);
    if theta >= LOG_DOMAIN_LIMIT {
        return Err(GeometryError::Domain(format!(
            "rotation angle {theta} too close to π for the logarithm"
        )));
    }
    let omega = if s < 1e-12 {
        // θ/sin(θ/2) → 2 as θ → 0
        imag * 2.0
    } else {
        imag * (theta / s)
    };
    let v = so3_left_jacobian_inv(&omega) * p.translation;
    Ok(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rz(angle: f64, t: Vector3<f64>) -> Pose {
        Pose::from_axis_angle(&Vector3::z(), angle, t)
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        let d = a.inverse().compose(b);
        d.angle() < tol && d.translation().norm() < tol
    }

    #[test]
    fn identity_composition() {
        let p = rz(0.3, Vector3::new(1.0, -2.0, 0.5));
        assert!(close(&Pose::identity().compose(&p), &p, 1e-12));
        assert!(close(&p.compose(&p.inverse()), &Pose::identity(), 1e-12));
    }

    #[test]
    fn compose_matches_matrix_product() {
        let a = rz(FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let c = a.compose(&a);
        let m = a.to_matrix() * a.to_matrix();
        assert!((c.to_matrix() - m).abs().max() < 1e-12);
        // rotation of 180° about z and translation (1, 1, 0)
        assert!((c.angle() - PI).abs() < 1e-9);
        assert!((c.translation() - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn canonical_scalar_part_non_negative() {
        let p = Pose::from_wxyz(-0.5, 0.5, -0.5, 0.5, Vector3::zeros()).unwrap();
        assert!(p.quaternion_wxyz()[0] >= 0.0);
        assert!((p.rotation().quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_of_zero_and_pure_rotation() {
        let id = se3_exp(&Vector6::zeros());
        assert!(close(&id, &Pose::identity(), 1e-15));
        let r = se3_exp(&Vector6::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let expect = rz(FRAC_PI_2, Vector3::zeros());
        assert!(close(&r, &expect, 1e-12));
        assert!(r.translation().norm() < 1e-15);
    }

    #[test]
    fn log_near_pi_is_domain_error() {
        let p = rz(PI - 1e-8, Vector3::zeros());
        assert!(matches!(se3_log(&p), Err(GeometryError::Domain(_))));
        let ok = rz(PI - 1e-3, Vector3::new(0.1, 0.2, 0.3));
        let xi = se3_log(&ok).unwrap();
        assert!(close(&se3_exp(&xi), &ok, 1e-9));
    }

    #[test]
    fn adjoint_conjugates_exponential() {
        let t = rz(0.7, Vector3::new(0.3, -1.0, 2.0));
        let xi = Vector6::new(0.1, -0.2, 0.05, 0.4, 0.1, -0.3);
        let lhs = t.compose(&se3_exp(&xi)).compose(&t.inverse());
        let rhs = se3_exp(&(t.adjoint() * xi));
        assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn left_jacobian_inverse_matches_finite_differences() {
        let xi = Vector6::new(0.4, -0.9, 0.3, 1.2, -0.5, 0.8);
        let jinv = se3_left_jacobian_inv(&xi);
        let base = se3_exp(&xi);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = se3_log(&se3_exp(&d).compose(&base)).unwrap();
            let minus = se3_log(&se3_exp(&(-d)).compose(&base)).unwrap();
            let col = (plus - minus) / (2.0 * h);
            assert!((col - jinv.column(k)).norm() < 1e-7, "column {k}");
        }
        let j = se3_left_jacobian(&xi);
        assert!((j * jinv - Matrix6::identity()).norm() < 1e-12);
    }

    #[test]
    fn small_angle_series_are_continuous() {
        for &theta in &[1e-5, 9.9e-5, 1.01e-4, 9.9e-4, 1.01e-3] {
            let xi = Vector6::new(theta, 0.0, 0.0, 0.3, -0.2, 0.1);
            let p = se3_exp(&xi);
            let back = se3_log(&p).unwrap();
            assert!((back - xi).norm() < 1e-12);
            let j = se3_left_jacobian(&xi);
            let jinv = se3_left_jacobian_inv(&xi);
            assert!((j * jinv - Matrix6::identity()).norm() < 1e-10);
        }
    }
}
