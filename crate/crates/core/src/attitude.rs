//! Rotation algebra: scalar-last unit quaternions, modified Rodrigues parameters
//! and direction cosine matrices.
//!
//! Conventions used throughout the crate:
//!
//! * A quaternion `q = [v; s]` stores the vector part first and the scalar last.
//! * `q_to_dcm(q)` is the attitude matrix `A(q)` mapping inertial-frame
//!   components into body-frame components, `A = (s² - |v|²) I + 2 v vᵀ - 2 s [v×]`.
//! * Composition follows `A(a ⊗ b) = A(a) A(b)`, so `a ⊗ b` means "rotate by `b`,
//!   then by `a`".
//! * Kinematics are `q̇ = ½ Ω(ω) q` with body-frame rates, equivalently `Ȧ = -[ω×] A`.
//! * MRPs use `p = v / (1 + s)`, i.e. `p = tan(θ/4) ê`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Scalar parts at or below this value are treated as the MRP shadow singularity.
const SHADOW_LIMIT: f64 = -1.0 + 1e-9;

/// Unit quaternion, scalar-last.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub v: Vector3<f64>,
    pub s: f64,
}

/// Modified Rodrigues parameters `p = v / (1 + s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mrp(pub Vector3<f64>);

/// Proper orthogonal 3×3 attitude matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dcm(pub Matrix3<f64>);

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        v: Vector3::new(0.0, 0.0, 0.0),
        s: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64, s: f64) -> Self {
        Quaternion {
            v: Vector3::new(x, y, z),
            s,
        }
    }

    /// Builds from `[x, y, z, s]` storage order.
    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.v.x, self.v.y, self.v.z, self.s]
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.v.x, self.v.y, self.v.z, self.s)
    }

    pub fn from_vector4(q: &Vector4<f64>) -> Self {
        Quaternion::new(q[0], q[1], q[2], q[3])
    }

    pub fn norm(&self) -> f64 {
        (self.v.norm_squared() + self.s * self.s).sqrt()
    }

    pub fn normalize(self) -> Self {
        let n = self.norm();
        Quaternion {
            v: self.v / n,
            s: self.s / n,
        }
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.v.dot(&other.v) + self.s * other.s
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let half = 0.5 * angle;
        Quaternion {
            v: axis.normalize() * half.sin(),
            s: half.cos(),
        }
    }

    /// Rotation vector `θ ê` to quaternion.
    pub fn from_rotation_vector(theta: &Vector3<f64>) -> Self {
        let angle = theta.norm();
        if angle < 1e-12 {
            return Quaternion {
                v: 0.5 * theta,
                s: 1.0,
            }
            .normalize();
        }
        Quaternion::from_axis_angle(theta, angle)
    }

    /// Rotation vector of the shortest rotation equivalent to `self`.
    pub fn to_rotation_vector(&self) -> Vector3<f64> {
        let q = if self.s < 0.0 { -*self } else { *self };
        let vn = q.v.norm();
        if vn < 1e-15 {
            return 2.0 * q.v;
        }
        let angle = 2.0 * vn.atan2(q.s);
        q.v * (angle / vn)
    }

    /// Principal rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.v.norm().atan2(self.s.abs())
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion {
            v: -self.v,
            s: -self.s,
        }
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        qmult(&self, &rhs)
    }
}

impl Mrp {
    pub fn zero() -> Self {
        Mrp(Vector3::zeros())
    }

    /// MRP equivalent to the rotation vector `θ ê`: `tan(θ/4) ê`.
    pub fn from_rotation_vector(theta: &Vector3<f64>) -> Self {
        let angle = theta.norm();
        if angle < 1e-6 {
            // tan(x/4)/x = 1/4 + x²/192 + O(x⁴)
            return Mrp(theta * (0.25 + angle * angle / 192.0));
        }
        Mrp(theta * ((0.25 * angle).tan() / angle))
    }
}

impl Dcm {
    pub fn identity() -> Self {
        Dcm(Matrix3::identity())
    }

    pub fn transpose(&self) -> Dcm {
        Dcm(self.0.transpose())
    }

    pub fn rotate(&self, u: &Vector3<f64>) -> Vector3<f64> {
        self.0 * u
    }
}

impl Mul for Dcm {
    type Output = Dcm;

    fn mul(self, rhs: Dcm) -> Dcm {
        Dcm(self.0 * rhs.0)
    }
}

/// Quaternion composition `a ⊗ b`, renormalized.
pub fn qmult(a: &Quaternion, b: &Quaternion) -> Quaternion {
    Quaternion {
        v: a.s * b.v + b.s * a.v - a.v.cross(&b.v),
        s: a.s * b.s - a.v.dot(&b.v),
    }
    .normalize()
}

pub fn qconj(q: &Quaternion) -> Quaternion {
    Quaternion { v: -q.v, s: q.s }
}

/// Returns `q` or `-q`, whichever has a non-negative dot product with `reference`.
pub fn sign_align(q: &Quaternion, reference: &Quaternion) -> Quaternion {
    if q.dot(reference) < 0.0 {
        -*q
    } else {
        *q
    }
}

/// Cross-product matrix: `skew(v) u = v × u`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Kinematics matrix for scalar-last storage: `q̇ = ½ Ω(ω) q`.
///
/// `Ω(ω) = [[-[ω×], ω], [-ωᵀ, 0]]`.
pub fn omega_matrix(w: &Vector3<f64>) -> Matrix4<f64> {
    Matrix4::new(
        0.0, w.z, -w.y, w.x, //
        -w.z, 0.0, w.x, w.y, //
        w.y, -w.x, 0.0, w.z, //
        -w.x, -w.y, -w.z, 0.0,
    )
}

/// Time derivative `½ Ω(ω) q` without forming the 4×4 matrix.
pub fn quaternion_rate(q: &Quaternion, w: &Vector3<f64>) -> Quaternion {
    Quaternion {
        v: 0.5 * (q.s * w - w.cross(&q.v)),
        s: -0.5 * w.dot(&q.v),
    }
}

pub fn q_to_dcm(q: &Quaternion) -> Dcm {
    let v = q.v;
    let s = q.s;
    Dcm(
        (s * s - v.norm_squared()) * Matrix3::identity() + 2.0 * v * v.transpose()
            - 2.0 * s * skew(&v),
    )
}

/// Attitude matrix to quaternion (Shepperd's method), scalar part non-negative.
pub fn dcm_to_q(c: &Dcm) -> Quaternion {
    let a = &c.0;
    let tr = a.trace();
    let candidates = [a[(0, 0)], a[(1, 1)], a[(2, 2)], tr];
    let (imax, _) = candidates
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        });

    let q = match imax {
        0 => {
            let x4 = (1.0 + 2.0 * a[(0, 0)] - tr).sqrt() * 2.0;
            Quaternion::new(
                0.25 * x4,
                (a[(0, 1)] + a[(1, 0)]) / x4,
                (a[(0, 2)] + a[(2, 0)]) / x4,
                (a[(1, 2)] - a[(2, 1)]) / x4,
            )
        }
        1 => {
            let y4 = (1.0 + 2.0 * a[(1, 1)] - tr).sqrt() * 2.0;
            Quaternion::new(
                (a[(0, 1)] + a[(1, 0)]) / y4,
                0.25 * y4,
                (a[(1, 2)] + a[(2, 1)]) / y4,
                (a[(2, 0)] - a[(0, 2)]) / y4,
            )
        }
        2 => {
            let z4 = (1.0 + 2.0 * a[(2, 2)] - tr).sqrt() * 2.0;
            Quaternion::new(
                (a[(0, 2)] + a[(2, 0)]) / z4,
                (a[(1, 2)] + a[(2, 1)]) / z4,
                0.25 * z4,
                (a[(0, 1)] - a[(1, 0)]) / z4,
            )
        }
        _ => {
            let s4 = (1.0 + tr).sqrt() * 2.0;
            Quaternion::new(
                (a[(1, 2)] - a[(2, 1)]) / s4,
                (a[(2, 0)] - a[(0, 2)]) / s4,
                (a[(0, 1)] - a[(1, 0)]) / s4,
                0.25 * s4,
            )
        }
    };
    let q = q.normalize();
    if q.s < 0.0 {
        -q
    } else {
        q
    }
}

pub fn q_to_mrp(q: &Quaternion) -> Result<Mrp> {
    if q.s <= SHADOW_LIMIT {
        return Err(Error::ShadowSingularity { scalar: q.s });
    }
    Ok(Mrp(q.v / (1.0 + q.s)))
}

pub fn mrp_to_q(p: &Mrp) -> Quaternion {
    let n = p.0.norm_squared();
    Quaternion {
        v: 2.0 * p.0 / (1.0 + n),
        s: (1.0 - n) / (1.0 + n),
    }
}

/// Closed-form MRP attitude matrix, `I + (8[p×]² - 4(1 - |p|²)[p×]) / (1 + |p|²)²`.
pub fn mrp_to_dcm(p: &Mrp) -> Dcm {
    let n = p.0.norm_squared();
    let px = skew(&p.0);
    let d = (1.0 + n) * (1.0 + n);
    Dcm(Matrix3::identity() + (8.0 * px * px - 4.0 * (1.0 - n) * px) / d)
}

/// `A(q) u`.
pub fn rotate(q: &Quaternion, u: &Vector3<f64>) -> Vector3<f64> {
    // u + 2 s (u × v) + 2 v × (v × u)  ==  A(q) u  with A = (s²-|v|²)I + 2vvᵀ - 2s[v×]
    let t = 2.0 * q.v.cross(u);
    u - q.s * t + q.v.cross(&t)
}

/// Rotation angle between two attitudes, in `[0, π]`.
pub fn angle_between(a: &Quaternion, b: &Quaternion) -> f64 {
    qmult(a, &qconj(b)).angle()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_quaternion(rng: &mut impl Rng) -> Quaternion {
        loop {
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = q.norm();
            if n > 0.1 && n < 1.0 {
                return q.normalize();
            }
        }
    }

    fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
        random_quaternion(rng).v.normalize()
    }

    fn aligned_distance(a: &Quaternion, b: &Quaternion) -> f64 {
        (sign_align(a, b).as_vector4() - b.as_vector4()).norm()
    }

    #[test]
    fn qmult_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = random_quaternion(&mut rng);
            assert!(aligned_distance(&qmult(&Quaternion::IDENTITY, &q), &q) < 1e-15);
            assert!(aligned_distance(&qmult(&q, &qconj(&q)), &Quaternion::IDENTITY) < 1e-15);
        }
    }

    #[test]
    fn two_quarter_turns_about_x_make_a_half_turn() {
        let quarter = Quaternion::from_axis_angle(&Vector3::x(), FRAC_PI_2);
        let composed = qmult(&quarter, &quarter);
        // Oracle: compose the attitude matrices and convert back.
        let via_dcm = dcm_to_q(&(q_to_dcm(&quarter) * q_to_dcm(&quarter)));
        assert!(aligned_distance(&composed, &via_dcm) < 1e-15);
        assert!(aligned_distance(&composed, &Quaternion::new(1.0, 0.0, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn conjugate_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(qconj(&Quaternion::IDENTITY), Quaternion::IDENTITY);
        for _ in 0..100 {
            let q = random_quaternion(&mut rng);
            assert_eq!(qconj(&qconj(&q)), q);
            let lhs = q_to_dcm(&qconj(&q)).0;
            let rhs = q_to_dcm(&q).0.transpose();
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn omega_matrix_structure() {
        assert_eq!(omega_matrix(&Vector3::zeros()), Matrix4::zeros());
        let w = Vector3::new(0.3, -1.2, 0.7);
        let om = omega_matrix(&w);
        assert_eq!(om + om.transpose(), Matrix4::zeros());
        let q = Quaternion::new(0.1, 0.2, 0.3, 0.9).normalize();
        let direct = quaternion_rate(&q, &w).as_vector4();
        assert!((0.5 * om * q.as_vector4() - direct).norm() < 1e-15);
    }

    #[test]
    fn constant_rate_integration_matches_axis_angle() {
        // ω = (0.1, 0, 0) rad/s for 10 s is a 1 rad rotation about x.
        let w = Vector3::new(0.1, 0.0, 0.0);
        let om = omega_matrix(&w);
        let dt = 1e-3;
        let mut q = Quaternion::IDENTITY.as_vector4();
        for _ in 0..10_000 {
            let k1 = 0.5 * om * q;
            let k2 = 0.5 * om * (q + 0.5 * dt * k1);
            let k3 = 0.5 * om * (q + 0.5 * dt * k2);
            let k4 = 0.5 * om * (q + dt * k3);
            q += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let q = Quaternion::from_vector4(&q).normalize();
        let expected = Quaternion::new(0.5f64.sin(), 0.0, 0.0, 0.5f64.cos());
        assert!(aligned_distance(&q, &expected) < 1e-12);
        // DCM-propagation oracle: A(t) = exp(-[ω×] t) A(0).
        let dcm_oracle = (-skew(&w) * 10.0).exp();
        assert!((q_to_dcm(&q).0 - dcm_oracle).norm() < 1e-11);
    }

    #[test]
    fn skew_is_cross_product() {
        let e1 = Vector3::x();
        assert_eq!(skew(&e1) * Vector3::y(), Vector3::z());
        let v = Vector3::new(0.4, -2.0, 1.5);
        assert_eq!(skew(&v) * v, Vector3::zeros());
        assert_eq!(skew(&v).trace(), 0.0);
        let u = Vector3::new(-0.3, 0.2, 5.0);
        assert!((skew(&v) * u - v.cross(&u)).norm() < 1e-15);
    }

    #[test]
    fn mrp_known_values() {
        assert_eq!(q_to_mrp(&Quaternion::IDENTITY).unwrap(), Mrp::zero());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = q_to_mrp(&Quaternion::new(0.0, 0.0, h, h)).unwrap();
        assert_relative_eq!(p.0.z, FRAC_PI_8.tan(), epsilon = 1e-15);
        assert_relative_eq!(p.0.z, 0.41421356237309503, epsilon = 1e-14);
        assert_eq!(p.0.x, 0.0);
    }

    #[test]
    fn mrp_shadow_singularity_is_reported() {
        let q = Quaternion::new(1e-6, 0.0, 0.0, -1.0).normalize();
        assert!(matches!(q_to_mrp(&q), Err(Error::ShadowSingularity { .. })));
        // the flipped sign is fine
        assert!(q_to_mrp(&-q).is_ok());
    }

    #[test]
    fn mrp_small_angle_linearization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = random_unit_vector(&mut rng);
            let theta = axis * rng.random_range(0.0..1e-3);
            let p = q_to_mrp(&Quaternion::from_rotation_vector(&theta)).unwrap();
            assert!((p.0 - theta / 4.0).norm() <= 1e-8);
            assert!((Mrp::from_rotation_vector(&theta).0 - p.0).norm() < 1e-15);
        }
    }

    #[test]
    fn dcm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let q = random_quaternion(&mut rng);
            let back = dcm_to_q(&q_to_dcm(&q));
            assert!(aligned_distance(&back, &q) < 1e-10);
        }
        // near-180° rotations exercise the non-trace branches
        for axis in [
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
            Vector3::new(1.0, 1.0, 0.0),
        ] {
            let q = Quaternion::from_axis_angle(&axis, PI - 1e-9);
            assert!(aligned_distance(&dcm_to_q(&q_to_dcm(&q)), &q) < 1e-10);
        }
    }

    #[test]
    fn dcm_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let c = q_to_dcm(&random_quaternion(&mut rng)).0;
            assert!((c * c.transpose() - Matrix3::identity()).norm() <= 1e-10);
            assert!((c.determinant() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn ninety_degrees_about_z_rotates_frame() {
        let q = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        // attitude matrix expresses inertial x in the rotated body frame as -y
        let c = q_to_dcm(&q);
        assert!((c.rotate(&Vector3::x()) - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        assert_relative_eq!(q.angle(), FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(
            angle_between(&q, &Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_4)),
            FRAC_PI_4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn sign_align_basics() {
        let q = Quaternion::new(0.2, -0.4, 0.1, -0.8).normalize();
        assert_eq!(sign_align(&q, &q), q);
        assert_eq!(sign_align(&-q, &q), q);
    }

    #[test]
    fn rotation_vector_round_trip() {
        let theta = Vector3::new(0.3, -0.2, 1.1);
        let back = Quaternion::from_rotation_vector(&theta).to_rotation_vector();
        assert!((back - theta).norm() < 1e-14);
    }

    mod properties {
        use proptest::prelude::*;

        use super::*;

        fn quaternion() -> impl Strategy<Value = Quaternion> {
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
                .prop_filter("non-degenerate", |(x, y, z, s)| {
                    x * x + y * y + z * z + s * s > 0.01
                })
                .prop_map(|(x, y, z, s)| Quaternion::new(x, y, z, s).normalize())
        }

        fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
                .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 0.01)
                .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
        }

        fn small_mrp() -> impl Strategy<Value = Mrp> {
            (unit_vector(), 0.0..0.4999f64).prop_map(|(u, r)| Mrp(u * r))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn composition_matches_matrix_product(a in quaternion(), b in quaternion()) {
                let lhs = q_to_dcm(&qmult(&a, &b)).0;
                let rhs = q_to_dcm(&a).0 * q_to_dcm(&b).0;
                prop_assert!((lhs - rhs).norm() <= 1e-9);
            }

            #[test]
            fn conversions_preserve_rotation_action(q in quaternion(), u in unit_vector()) {
                let by_dcm = q_to_dcm(&q).rotate(&u);
                prop_assert!((by_dcm - rotate(&q, &u)).norm() <= 1e-10);
                if q.s > -0.9 {
                    let p = q_to_mrp(&q).unwrap();
                    prop_assert!((mrp_to_dcm(&p).rotate(&u) - by_dcm).norm() <= 1e-10);
                    prop_assert!((q_to_dcm(&mrp_to_q(&p)).rotate(&u) - by_dcm).norm() <= 1e-10);
                }
            }

            #[test]
            fn mrp_round_trip(p in small_mrp()) {
                let back = q_to_mrp(&mrp_to_q(&p)).unwrap();
                prop_assert!((back.0 - p.0).norm() <= 1e-10);
            }

            #[test]
            fn sign_align_has_nonnegative_dot(q in quaternion(), r in quaternion()) {
                prop_assert!(sign_align(&q, &r).dot(&r) >= 0.0);
            }

            #[test]
            fn qmult_output_is_unit(a in quaternion(), b in quaternion()) {
                prop_assert!((qmult(&a, &b).norm() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
