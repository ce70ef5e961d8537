//! One seeded simulation: truth propagation, measurement synthesis and the
//! estimator loop, logged at every step.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{MisalignmentSampling, SimConfig};
use crate::attitude::{angle_between, q_to_mrp, qconj, qmult, Quaternion};
use crate::dynamics::{propagate_truth, TruthState};
use crate::error::Result;
use crate::estimator::MmaeEstimator;
use crate::mekf::{ATTITUDE, BIAS, OMEGA};
use crate::sensors::{measure_gyro, measure_vectors, triad, StarCatalog};

/// Per-trial random stream: the campaign seed selects the key, the trial index the stream.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Uniformly distributed rotation (Shoemake's subgroup algorithm).
pub fn random_attitude(rng: &mut impl Rng) -> Quaternion {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quaternion::new(
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    )
}

/// Small-angle attitude error of `q_est` relative to `q_true` (four times the MRP of
/// `q_true ⊗ q_est⁻¹`), rad.
pub fn attitude_error(q_true: &Quaternion, q_est: &Quaternion) -> Vector3<f64> {
    let mut dq = qmult(q_true, &qconj(q_est));
    if dq.s < 0.0 {
        dq = -dq;
    }
    4.0 * q_to_mrp(&dq).expect("non-negative scalar part").0
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q_true: Quaternion,
    pub q_est: Quaternion,
    pub omega_true: Vector3<f64>,
    pub omega_est: Vector3<f64>,
    pub bias_est: Vector3<f64>,
    pub mu_est: Vector3<f64>,
    /// Weighted spread of the hypotheses about `mu_est`.
    pub mu_spread: Vector3<f64>,
    pub attitude_error: Vector3<f64>,
    /// 1σ of the MAP filter, attitude in the same small-angle units as `attitude_error`.
    pub sigma_attitude: Vector3<f64>,
    pub sigma_omega: Vector3<f64>,
    pub sigma_bias: Vector3<f64>,
    pub psi: f64,
    pub hypotheses: usize,
    pub max_weight: f64,
    pub refined: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub trial: usize,
    pub bias_true: Vector3<f64>,
    pub mu_true: Vector3<f64>,
    pub records: Vec<StepRecord>,
    pub refinement_times: Vec<f64>,
    /// Set when the estimator diverged; `records` then stop at the failing step.
    pub failure: Option<String>,
    pub degenerate_fusions: usize,
}

impl StepRecord {
    pub fn omega_error(&self) -> Vector3<f64> {
        self.omega_true - self.omega_est
    }

    pub fn bias_error(&self, truth: &RunResult) -> Vector3<f64> {
        truth.bias_true - self.bias_est
    }

    pub fn mu_error(&self, truth: &RunResult) -> Vector3<f64> {
        truth.mu_true - self.mu_est
    }

    /// Sign-aligned quaternion component difference `q_true - q_est`.
    pub fn quaternion_difference(&self) -> nalgebra::Vector4<f64> {
        let est = crate::attitude::sign_align(&self.q_est, &self.q_true);
        self.q_true.as_vector4() - est.as_vector4()
    }
}

impl RunResult {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("at least one logged step")
    }

    pub fn refinements(&self) -> usize {
        self.refinement_times.len()
    }

    pub fn final_attitude_error_deg(&self) -> f64 {
        let r = self.last();
        angle_between(&r.q_true, &r.q_est).to_degrees()
    }

    pub fn final_rate_error(&self) -> f64 {
        self.last().omega_error().norm()
    }

    pub fn final_bias_error(&self) -> f64 {
        self.last().bias_error(self).norm()
    }

    pub fn final_mu_error(&self) -> f64 {
        self.last().mu_error(self).norm()
    }
}

/// Runs trial `trial` of the campaign described by `cfg`.
pub fn run_trial(cfg: &SimConfig, trial: usize) -> Result<RunResult> {
    let inertia = cfg.inertia()?;
    let torque = cfg.torque()?;
    let catalog: StarCatalog = cfg.catalog()?;
    let est_cfg = cfg.estimator_config()?;
    let dt = cfg.dynamics.dt;
    let noise = cfg.sensors.noise;
    let gyro = cfg.sensors.gyro;
    let mut rng = trial_rng(cfg.seed, trial);

    let q0 = random_attitude(&mut rng);
    let bias_sigma = cfg.filter.p0_sigma[1];
    let bias = Vector3::from_fn(|_, _| bias_sigma * rng.sample::<f64, _>(StandardNormal));
    let mu = match cfg.misalignment {
        MisalignmentSampling::Fixed { value } => Vector3::from(value),
        MisalignmentSampling::UniformBox { half_width } => Vector3::from_fn(|_, _| {
            if half_width > 0.0 {
                rng.random_range(-half_width..=half_width)
            } else {
                0.0
            }
        }),
    };
    let mut truth = TruthState {
        q: q0,
        omega: cfg.omega0(),
        bias,
        misalignment: mu,
    };

    let measure = |truth: &TruthState, reference: &Quaternion, rng: &mut ChaCha8Rng| -> Result<_> {
        let (b1, b2) = measure_vectors(truth, &catalog, &noise, rng);
        let q_meas = triad(&catalog.v1, &catalog.v2, &b1, &b2, reference)?;
        Ok((q_meas, measure_gyro(truth, &gyro, rng)))
    };

    let (q_first, w_first) = measure(&truth, &Quaternion::IDENTITY, &mut rng)?;
    let mut est = MmaeEstimator::new(est_cfg, q_first, w_first, 0.0)?;

    let n_steps = cfg.n_steps();
    let mut result = RunResult {
        trial,
        bias_true: bias,
        mu_true: mu,
        records: Vec::with_capacity(n_steps),
        refinement_times: Vec::new(),
        failure: None,
        degenerate_fusions: 0,
    };

    for k in 1..=n_steps {
        truth = propagate_truth(&truth, &inertia, &torque, (k - 1) as f64 * dt, dt);
        let t = k as f64 * dt;
        let (q_meas, w_meas) = measure(&truth, &est.attitude(), &mut rng)?;
        let report = match est.step(&q_meas, &w_meas) {
            Ok(report) => report,
            Err(e) => {
                result.failure = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        if report.refined {
            result.refinement_times.push(t);
        }
        let q_est = est.attitude();
        let map = est.map_filter().covariance;
        let bank = est.bank();
        result.records.push(StepRecord {
            t,
            q_true: truth.q,
            q_est,
            omega_true: truth.omega,
            omega_est: est.rate(),
            bias_est: est.bias(),
            mu_est: est.misalignment(),
            mu_spread: bank.misalignment_spread(),
            attitude_error: attitude_error(&truth.q, &q_est),
            sigma_attitude: 4.0 * map.sigma(ATTITUDE),
            sigma_omega: map.sigma(OMEGA),
            sigma_bias: map.sigma(BIAS),
            psi: report.psi,
            hypotheses: bank.len(),
            max_weight: bank.max_weight(),
            refined: report.refined,
        });
    }
    result.degenerate_fusions = est.degenerate_fusions();
    Ok(result)
}
