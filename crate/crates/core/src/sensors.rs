//! Star-tracker and gyro measurement synthesis, and the TRIAD attitude solution.
//!
//! The star-tracker misalignment `μ` is a rotation vector describing the fixed
//! mounting offset: a body-frame direction `v_B` is reported by the tracker as
//! `exp([μ×]) v_B`. The matching attitude offset quaternion is
//! [`sensor_offset`], so a misaligned tracker measures `sensor_offset(μ) ⊗ q`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attitude::{dcm_to_q, mrp_to_dcm, q_to_dcm, sign_align, Dcm, Mrp, Quaternion};
use crate::dynamics::TruthState;
use crate::error::{Error, Result};

/// Minimum `|v1 × v2|` accepted by [`triad`].
const TRIAD_MIN_CROSS: f64 = 1e-6;

/// Inertial directions to the two tracked stars.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StarCatalog {
    pub v1: Vector3<f64>,
    pub v2: Vector3<f64>,
}

impl StarCatalog {
    pub fn new(v1: Vector3<f64>, v2: Vector3<f64>) -> Result<Self> {
        if (v1.norm() - 1.0).abs() > 1e-9 || (v2.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "catalog star directions must be unit vectors".into(),
            ));
        }
        if v1.cross(&v2).norm() < 0.1 {
            return Err(Error::Config(
                "catalog star directions are too close to collinear for TRIAD".into(),
            ));
        }
        Ok(StarCatalog { v1, v2 })
    }
}

impl Default for StarCatalog {
    fn default() -> Self {
        StarCatalog {
            v1: Vector3::x(),
            v2: Vector3::y(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Gaussian vector noise added to each body-frame direction.
    Additive,
    /// Each direction rotated by a small random rotation.
    Multiplicative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Additive vector noise standard deviation (dimensionless).
    pub sigma_v: f64,
    /// Multiplicative rotation noise standard deviation, rad.
    pub sigma_theta: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            kind: NoiseKind::Multiplicative,
            sigma_v: 8.73e-4,
            sigma_theta: 8.73e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GyroModel {
    /// Rate white-noise standard deviation, rad/s.
    pub sigma: f64,
}

impl Default for GyroModel {
    fn default() -> Self {
        GyroModel { sigma: 5e-4 }
    }
}

/// Rotation applied by a misaligned tracker to body-frame directions.
pub fn misalignment_dcm(mu: &Vector3<f64>) -> Dcm {
    mrp_to_dcm(&Mrp::from_rotation_vector(&-mu))
}

/// Attitude offset quaternion of the tracker frame relative to the body frame.
pub fn sensor_offset(mu: &Vector3<f64>) -> Quaternion {
    Quaternion::from_rotation_vector(&-mu)
}

pub fn apply_misalignment(v_body: &Vector3<f64>, mu: &Vector3<f64>) -> Vector3<f64> {
    misalignment_dcm(mu).rotate(v_body)
}

fn standard_normal3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Synthesizes the two tracker observations. Both models consume exactly three
/// standard normals per star so that the random stream stays aligned between them.
pub fn measure_vectors(
    truth: &TruthState,
    catalog: &StarCatalog,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> (Vector3<f64>, Vector3<f64>) {
    let c_bi = q_to_dcm(&truth.q);
    let c_mis = misalignment_dcm(&truth.misalignment);
    let mut observe = |v_inertial: &Vector3<f64>| {
        let v = c_mis.rotate(&c_bi.rotate(v_inertial));
        let n = standard_normal3(rng);
        match noise.kind {
            NoiseKind::Additive => v + noise.sigma_v * n,
            NoiseKind::Multiplicative => {
                let c_noise = mrp_to_dcm(&Mrp::from_rotation_vector(&(noise.sigma_theta * n)));
                c_noise.rotate(&v)
            }
        }
    };
    let v1 = observe(&catalog.v1);
    let v2 = observe(&catalog.v2);
    (v1, v2)
}

/// `ω_meas = ω + b + η`.
pub fn measure_gyro(truth: &TruthState, gyro: &GyroModel, rng: &mut impl Rng) -> Vector3<f64> {
    truth.omega + truth.bias + gyro.sigma * standard_normal3(rng)
}

fn triad_basis(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let t1 = a.normalize();
    let cross = t1.cross(&b.normalize());
    let cross_norm = cross.norm();
    if cross_norm <= TRIAD_MIN_CROSS {
        return Err(Error::CollinearVectors { cross_norm });
    }
    let t2 = cross / cross_norm;
    let t3 = t1.cross(&t2);
    Ok(Matrix3::from_columns(&[t1, t2, t3]))
}

/// TRIAD attitude `Ĉ_BI = T_B T_Iᵀ` as a quaternion, sign-aligned to `reference`.
pub fn triad(
    v1_inertial: &Vector3<f64>,
    v2_inertial: &Vector3<f64>,
    v1_body: &Vector3<f64>,
    v2_body: &Vector3<f64>,
    reference: &Quaternion,
) -> Result<Quaternion> {
    let t_i = triad_basis(v1_inertial, v2_inertial)?;
    let t_b = triad_basis(v1_body, v2_body)?;
    let q = dcm_to_q(&Dcm(t_b * t_i.transpose()));
    Ok(sign_align(&q, reference))
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::attitude::{angle_between, qmult};

    fn truth(q: Quaternion, mu: Vector3<f64>) -> TruthState {
        TruthState {
            q,
            omega: Vector3::new(0.05, 0.07, -0.08),
            bias: Vector3::new(1e-3, 0.0, -1e-3),
            misalignment: mu,
        }
    }

    fn noiseless(kind: NoiseKind) -> NoiseModel {
        NoiseModel {
            kind,
            sigma_v: 0.0,
            sigma_theta: 0.0,
        }
    }

    #[test]
    fn misalignment_rotation() {
        let v = Vector3::new(0.3, -0.5, 0.8);
        assert_eq!(apply_misalignment(&v, &Vector3::zeros()), v);
        let mu = Vector3::new(2e-3, -1e-3, 4e-3);
        assert_relative_eq!(
            apply_misalignment(&v, &mu).norm(),
            v.norm(),
            epsilon = 1e-15
        );
        let got = apply_misalignment(&Vector3::x(), &Vector3::new(0.0, 0.0, 1e-3));
        // closed-form z rotation by 1e-3 rad
        let expected = Vector3::new(1e-3f64.cos(), 1e-3f64.sin(), 0.0);
        assert!((got - expected).norm() < 1e-15);
        assert_relative_eq!(got.x, 0.9999995, epsilon = 1e-7);
    }

    #[test]
    fn sensor_offset_matches_misalignment_dcm() {
        let mu = Vector3::new(2e-3, -1e-3, 4e-3);
        let a = q_to_dcm(&sensor_offset(&mu)).0;
        assert!((a - misalignment_dcm(&mu).0).norm() < 1e-15);
    }

    #[test]
    fn noiseless_aligned_measurement_is_exact() {
        let q = Quaternion::new(0.3, -0.1, 0.5, 0.8).normalize();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cat = StarCatalog::default();
        let (v1, v2) = measure_vectors(
            &truth(q, Vector3::zeros()),
            &cat,
            &noiseless(NoiseKind::Additive),
            &mut rng,
        );
        let c = q_to_dcm(&q);
        assert_eq!(v1, c.rotate(&cat.v1));
        assert_eq!(v2, c.rotate(&cat.v2));
    }

    #[test]
    fn multiplicative_outputs_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = NoiseModel {
            kind: NoiseKind::Multiplicative,
            sigma_v: 0.0,
            sigma_theta: 0.05,
        };
        let x = truth(
            Quaternion::new(0.1, 0.2, 0.3, 0.9).normalize(),
            Vector3::new(1e-3, 0.0, 2e-3),
        );
        for _ in 0..1000 {
            let (v1, v2) = measure_vectors(&x, &StarCatalog::default(), &noise, &mut rng);
            assert!((v1.norm() - 1.0).abs() < 1e-14);
            assert!((v2.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn additive_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = 1e-3;
        let noise = NoiseModel {
            kind: NoiseKind::Additive,
            sigma_v: sigma,
            sigma_theta: 0.0,
        };
        let x = truth(Quaternion::IDENTITY, Vector3::zeros());
        let cat = StarCatalog::default();
        let n = 100_000;
        let mut sum = Vector3::zeros();
        let mut sum_sq = Vector3::zeros();
        let mut norm_sq = 0.0;
        for _ in 0..n {
            let (v1, _) = measure_vectors(&x, &cat, &noise, &mut rng);
            let e = v1 - cat.v1;
            sum += e;
            sum_sq += e.component_mul(&e);
            norm_sq += v1.norm_squared();
        }
        let nf = n as f64;
        for k in 0..3 {
            let mean = sum[k] / nf;
            let std = (sum_sq[k] / nf - mean * mean).sqrt();
            assert!((0.97e-3..=1.03e-3).contains(&std), "axis {k} std {std}");
        }
        // E|v|² = 1 + 3σ², up to the 2v·n cross term of std 2σ/√n
        assert_relative_eq!(
            norm_sq / nf,
            1.0 + 3.0 * sigma * sigma,
            epsilon = 4.0 * 2.0 * sigma / nf.sqrt()
        );
    }

    #[test]
    fn both_noise_models_consume_the_same_stream() {
        let x = truth(Quaternion::IDENTITY, Vector3::zeros());
        let mut a = ChaCha8Rng::seed_from_u64(12);
        let mut b = ChaCha8Rng::seed_from_u64(12);
        measure_vectors(
            &x,
            &StarCatalog::default(),
            &NoiseModel {
                kind: NoiseKind::Additive,
                ..Default::default()
            },
            &mut a,
        );
        measure_vectors(
            &x,
            &StarCatalog::default(),
            &NoiseModel {
                kind: NoiseKind::Multiplicative,
                ..Default::default()
            },
            &mut b,
        );
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn triad_recovers_identity() {
        let q = triad(
            &Vector3::x(),
            &Vector3::y(),
            &Vector3::x(),
            &Vector3::y(),
            &Quaternion::IDENTITY,
        )
        .unwrap();
        assert!(angle_between(&q, &Quaternion::IDENTITY) < 1e-15);
    }

    #[test]
    fn triad_rejects_collinear_vectors() {
        let v = Vector3::new(0.0, 0.6, 0.8);
        let err = triad(
            &Vector3::x(),
            &Vector3::y(),
            &v,
            &(2.0 * v),
            &Quaternion::IDENTITY,
        );
        assert!(matches!(err, Err(Error::CollinearVectors { .. })));
        let err = triad(
            &Vector3::x(),
            &Vector3::x(),
            &Vector3::x(),
            &Vector3::y(),
            &Quaternion::IDENTITY,
        );
        assert!(matches!(err, Err(Error::CollinearVectors { .. })));
        assert!(StarCatalog::new(Vector3::x(), Vector3::new(1.0, 0.01, 0.0).normalize()).is_err());
    }

    #[test]
    fn triad_is_exact_on_noiseless_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cat = StarCatalog::new(Vector3::x(), Vector3::new(0.0, 0.6, 0.8)).unwrap();
        for _ in 0..500 {
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let x = truth(q, Vector3::zeros());
            let (v1, v2) =
                measure_vectors(&x, &cat, &noiseless(NoiseKind::Multiplicative), &mut rng);
            let est = triad(&cat.v1, &cat.v2, &v1, &v2, &q).unwrap();
            assert!(angle_between(&est, &q) <= 1e-10);
            assert!(est.dot(&q) >= 0.0);
        }
    }

    #[test]
    fn triad_sees_the_misalignment_as_an_attitude_offset() {
        let q = Quaternion::new(0.2, 0.4, -0.1, 0.9).normalize();
        let mu = Vector3::new(3e-3, -2e-3, 1e-3);
        let cat = StarCatalog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (v1, v2) = measure_vectors(
            &truth(q, mu),
            &cat,
            &noiseless(NoiseKind::Additive),
            &mut rng,
        );
        let est = triad(&cat.v1, &cat.v2, &v1, &v2, &q).unwrap();
        assert!(angle_between(&est, &qmult(&sensor_offset(&mu), &q)) < 1e-12);
    }

    #[test]
    fn triad_is_scale_invariant() {
        let q = Quaternion::new(0.5, -0.2, 0.3, 0.7).normalize();
        let cat = StarCatalog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let noise = NoiseModel {
            kind: NoiseKind::Additive,
            sigma_v: 1e-2,
            sigma_theta: 0.0,
        };
        let (v1, v2) = measure_vectors(&truth(q, Vector3::zeros()), &cat, &noise, &mut rng);
        let base = triad(&cat.v1, &cat.v2, &v1, &v2, &q).unwrap();
        let scaled = triad(
            &(3.0 * cat.v1),
            &(0.5 * cat.v2),
            &(7.5 * v1),
            &(0.01 * v2),
            &q,
        )
        .unwrap();
        assert!((base.as_vector4() - scaled.as_vector4()).norm() < 1e-14);
    }

    #[test]
    fn triad_aligns_to_reference_sign() {
        let q = Quaternion::new(0.5, -0.2, 0.3, 0.7).normalize();
        let cat = StarCatalog::default();
        let c = q_to_dcm(&q);
        let est = triad(
            &cat.v1,
            &cat.v2,
            &c.rotate(&cat.v1),
            &c.rotate(&cat.v2),
            &-q,
        )
        .unwrap();
        assert!(est.dot(&-q) > 0.0);
    }

    #[test]
    fn gyro_adds_bias() {
        let x = truth(Quaternion::IDENTITY, Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let w = measure_gyro(&x, &GyroModel { sigma: 0.0 }, &mut rng);
        assert_eq!(w, x.omega + x.bias);
    }
}
