//! Rigid-body algebra on SE(3).
//!
//! Twists are ordered `(v, w)`: translational part first, rotational part
//! second. The corresponding Lie-algebra generators are
//!
//! ```text
//! T1 = [0 0 0 1]   T2 = [0 0 0 0]   T3 = [0 0 0 0]
//!      [0 0 0 0]        [0 0 0 1]        [0 0 0 0]
//!      [0 0 0 0]        [0 0 0 0]        [0 0 0 1]
//!      [0 0 0 0]        [0 0 0 0]        [0 0 0 0]
//!
//! T4 = [0 0  0 0]  T5 = [ 0 0 1 0]  T6 = [0 -1 0 0]
//!      [0 0 -1 0]       [ 0 0 0 0]       [1  0 0 0]
//!      [0 1  0 0]       [-1 0 0 0]       [0  0 0 0]
//!      [0 0  0 0]       [ 0 0 0 0]       [0  0 0 0]
//! ```
//!
//! so that `exp(sum_i xi_i T_i)` applied to a point `x` moves it, to first
//! order, by `v + w × x`.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this rotation angle the closed forms switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Cancellation-prone coefficients use their Taylor series below this angle.
const SERIES_ANGLE: f64 = 1e-3;

/// `log` refuses rotations whose angle is within this margin of pi.
pub const NEAR_PI_MARGIN: f64 = 1e-5;

/// Tolerance used when validating `RᵀR = I` and `det R = 1`.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Drift in `RᵀR - I` above which a composed rotation is projected back onto SO(3).
const DRIFT_TOL: f64 = 1e-12;

#[inline]
pub fn hat(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// An element of se(3): translational velocity `v` and angular velocity `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub v: Vec3,
    pub w: Vec3,
}

impl Twist {
    pub fn new(v: Vec3, w: Vec3) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self {
            v: Vec3::zeros(),
            w: Vec3::zeros(),
        }
    }

    pub fn from_vector(xi: &Vector6<f64>) -> Self {
        Self {
            v: Vec3::new(xi[0], xi[1], xi[2]),
            w: Vec3::new(xi[3], xi[4], xi[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            v: self.v * s,
            w: self.w * s,
        }
    }

    /// Returns `exp_twist(self)`.
    pub fn exp(&self) -> RigidTransform {
        exp_twist(self)
    }
}

/// Rotation plus translation, acting on points as `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform after checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|c| c.is_finite()) {
            return Err(Error::NonFinite("rigid transform"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (|RᵀR - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle_rad` about `axis` (need not be normalized), no translation.
    pub fn from_axis_angle(axis: &Vec3, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_twist(&Twist::new(Vec3::zeros(), axis * (angle_rad / n)))
    }

    /// Parses a row-major 3×4 `[R | t]` pose.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vec3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major `[R | t]`, 12 values.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    #[inline]
    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply_point(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
        .renormalized()
    }

    /// Projects the rotation onto SO(3) when accumulated round-off exceeds a
    /// tight bound; otherwise returns `self` unchanged.
    pub fn renormalized(self) -> Self {
        let drift = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if drift > DRIFT_TOL {
            self.orthonormalized()
        } else {
            self
        }
    }

    /// Nearest proper rotation to the stored matrix (polar decomposition).
    pub fn orthonormalized(self) -> Self {
        Self {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    pub fn log(&self) -> Result<Twist> {
        log_transform(self)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .iter()
            .chain(self.translation.iter())
            .all(|c| c.is_finite())
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.to_matrix4();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:.12e}", m[(r, c)])).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin = (vee(&(r - r.transpose())) * 0.5).norm();
    sin.atan2((r.trace() - 1.0) * 0.5)
}

/// Closest rotation matrix in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let v_t = svd.v_t.expect("3x3 SVD always yields Vᵀ");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(svd.singular_values.imin()).neg_mut();
        r = u * v_t;
    }
    r
}

/// Rodrigues coefficients `(sin θ / θ, (1 - cos θ) / θ², (θ - sin θ) / θ³)`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE {
        return (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0);
    }
    let half = 0.5 * theta;
    let sinc_half = half.sin() / half;
    let c = if theta < SERIES_ANGLE {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    };
    (theta.sin() / theta, 0.5 * sinc_half * sinc_half, c)
}

/// SE(3) exponential map.
pub fn exp_twist(xi: &Twist) -> RigidTransform {
    let theta = xi.w.norm();
    let w_hat = hat(&xi.w);
    let w_hat2 = w_hat * w_hat;
    let (a, b, c) = rodrigues_coefficients(theta);
    let rotation = Matrix3::identity() + w_hat * a + w_hat2 * b;
    let left_jacobian = Matrix3::identity() + w_hat * b + w_hat2 * c;
    RigidTransform {
        rotation,
        translation: left_jacobian * xi.v,
    }
}

/// SE(3) logarithm; inverse of [`exp_twist`] for rotation angles below pi.
pub fn log_transform(g: &RigidTransform) -> Result<Twist> {
    let r = &g.rotation;
    let theta = rotation_angle(r);
    if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(Error::AngleNearPi { angle_rad: theta });
    }
    let skew = vee(&(r - r.transpose())) * 0.5;
    let w = if theta < SMALL_ANGLE {
        skew
    } else {
        skew * (theta / theta.sin())
    };
    let w_hat = hat(&w);
    let w_hat2 = w_hat * w_hat;
    // V⁻¹ = I - ½Ŵ + (1/θ²)(1 - θ sin θ / (2(1 - cos θ))) Ŵ²
    let d = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w_hat * 0.5 + w_hat2 * d;
    Ok(Twist {
        v: v_inv * g.translation,
        w,
    })
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(g: &RigidTransform) -> RigidTransform {
    g.inverse()
}

pub fn apply(g: &RigidTransform, pts: &[Vec3]) -> Vec<Vec3> {
    g.apply(pts)
}

/// Axis-aligned bounding box `(min, max)` of a non-empty point list.
pub fn bounding_box(pts: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *pts.first()?;
    Some(pts.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

pub fn centroid(pts: &[Vec3]) -> Option<Vec3> {
    if pts.is_empty() {
        return None;
    }
    Some(pts.iter().fold(Vec3::zeros(), |acc, p| acc + p) / pts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn twist_matrix(xi: &Twist) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.w));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v);
        m
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor series.
    fn expm_oracle(a: &Matrix4<f64>) -> Matrix4<f64> {
        let squarings = 20;
        let scaled = a / f64::from(1u32 << squarings);
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..20 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn zero_twist_is_identity() {
        assert_eq!(exp_twist(&Twist::zero()), RigidTransform::identity());
    }

    #[test]
    fn pure_rotation_about_z() {
        let g = exp_twist(&Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, FRAC_PI_2)));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((g.rotation() - expected).norm() < 1e-15);
        assert_eq!(*g.translation(), Vec3::zeros());
    }

    #[test]
    fn screw_motion_matches_matrix_exponential() {
        let xi = Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, FRAC_PI_2));
        let oracle = expm_oracle(&twist_matrix(&xi));
        let g = exp_twist(&xi).to_matrix4();
        assert!((g - oracle).norm() < 1e-9, "{g} vs {oracle}");
        // V·v for a quarter turn: (sin θ/θ, (1-cos θ)/θ, 0)
        assert!((g[(0, 3)] - 2.0 / PI).abs() < 1e-12);
        assert!((g[(1, 3)] - 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn small_angle_series_is_continuous() {
        let v = Vec3::new(0.3, -0.2, 0.1);
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let below = exp_twist(&Twist::new(v, axis * 0.99e-8));
        let above = exp_twist(&Twist::new(v, axis * 1.01e-8));
        assert!((below.to_matrix4() - above.to_matrix4()).norm() < 1e-9);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = log_transform(&RigidTransform::identity()).unwrap();
        assert_eq!(xi.to_vector(), Vector6::zeros());
    }

    #[test]
    fn log_rejects_near_pi() {
        let g = RigidTransform::from_axis_angle(&Vec3::z(), 179.9999_f64.to_radians());
        assert!(matches!(log_transform(&g), Err(Error::AngleNearPi { .. })));
    }

    #[test]
    fn compose_identity_and_inverse() {
        let g = exp_twist(&Twist::new(Vec3::new(0.1, 2.0, -1.0), Vec3::new(0.4, -0.3, 1.2)));
        let id = RigidTransform::identity();
        assert!((compose(&id, &g).to_matrix4() - g.to_matrix4()).norm() < 1e-15);
        let e = compose(&g, &inverse(&g));
        assert!((e.to_matrix4() - Matrix4::identity()).norm() < 1e-9);
    }

    #[test]
    fn two_eighth_turns_make_a_quarter() {
        let q = RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_4);
        let h = RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        assert!(((q * q).to_matrix4() - h.to_matrix4()).norm() < 1e-12);
    }

    #[test]
    fn apply_examples() {
        let p = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(RigidTransform::identity().apply(&p), p);
        let t = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(t.apply(&[Vec3::zeros()]), vec![Vec3::new(1.0, 0.0, 0.0)]);
        let r = RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        assert!((r.apply_point(&p[0]) - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn inverse_of_translation() {
        let g = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(*g.inverse().translation(), Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn new_rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        let step = exp_twist(&Twist::new(
            Vec3::new(0.01, 0.02, 0.0),
            Vec3::new(0.013, -0.007, 0.021),
        ));
        let mut g = RigidTransform::identity();
        for _ in 0..5000 {
            g = g.compose(&step);
        }
        let r = g.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn row_major_round_trip() {
        let g = exp_twist(&Twist::new(Vec3::new(0.5, -1.0, 2.0), Vec3::new(0.1, 0.2, 0.3)));
        let back = RigidTransform::from_row_major_3x4(&g.to_row_major_3x4()).unwrap();
        assert_eq!(g, back);
    }

    fn twist_strategy(max_w: f64) -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-5.0..5.0f64),
            prop::array::uniform3(-1.0..1.0f64),
            0.0..max_w,
        )
            .prop_map(|(v, dir, angle)| {
                let d = Vec3::from(dir);
                let w = if d.norm() > 1e-3 {
                    d.normalize() * angle
                } else {
                    Vec3::zeros()
                };
                Twist::new(Vec3::from(v), w)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exp_log_round_trip(xi in twist_strategy(3.0)) {
            let back = log_transform(&exp_twist(&xi)).unwrap();
            prop_assert!((back.to_vector() - xi.to_vector()).norm() <= 1e-9);
        }
    }

    proptest! {
        #[test]
        fn small_twist_round_trip(xi in twist_strategy(1e-3)) {
            let xi = xi.scaled(1e-3);
            let back = log_transform(&exp_twist(&xi)).unwrap();
            prop_assert!((back.to_vector() - xi.to_vector()).norm() <= 1e-10 * xi.norm().max(1.0));
        }

        #[test]
        fn composition_is_closed(a in twist_strategy(3.0), b in twist_strategy(3.0)) {
            let g = exp_twist(&a).compose(&exp_twist(&b));
            let r = g.rotation();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn transforms_are_isometries(
            xi in twist_strategy(3.0),
            p in prop::array::uniform3(-10.0..10.0f64),
            q in prop::array::uniform3(-10.0..10.0f64),
        ) {
            let g = exp_twist(&xi);
            let (p, q) = (Vec3::from(p), Vec3::from(q));
            let d0 = (p - q).norm();
            let d1 = (g.apply_point(&p) - g.apply_point(&q)).norm();
            prop_assert!((d0 - d1).abs() < 1e-10);
            let back = g.inverse().apply_point(&g.apply_point(&p));
            prop_assert!((back - p).norm() < 1e-10);
        }
    }
}
