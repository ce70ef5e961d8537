//! Rigid-body truth propagation: Euler's equations with an optional damping torque
//! and quaternion kinematics, integrated jointly with classical RK4.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::attitude::{quaternion_rate, Quaternion};
use crate::error::{Error, Result};

/// Spacecraft inertia with its cached inverse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InertiaMatrix {
    j: Matrix3<f64>,
    j_inv: Matrix3<f64>,
}

impl InertiaMatrix {
    /// Validates symmetry (1e-12) and positive definiteness.
    pub fn new(j: Matrix3<f64>) -> Result<Self> {
        if (j - j.transpose()).norm() > 1e-12 {
            return Err(Error::Config("inertia matrix must be symmetric".into()));
        }
        if nalgebra::Cholesky::new(j).is_none() {
            return Err(Error::SingularInertia);
        }
        let j_inv = j.try_inverse().ok_or(Error::SingularInertia)?;
        Ok(InertiaMatrix { j, j_inv })
    }

    pub fn diagonal(jx: f64, jy: f64, jz: f64) -> Result<Self> {
        InertiaMatrix::new(Matrix3::from_diagonal(&Vector3::new(jx, jy, jz)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.j
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.j_inv
    }
}

/// A control torque held constant over `[start, start + duration)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorquePulse {
    pub start: f64,
    pub duration: f64,
    pub torque: [f64; 3],
}

/// External torques acting on the body: a constant control torque, scheduled
/// pulses and a viscous damping torque `-D ω` switched on at `t_damp`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TorqueProfile {
    pub control: Vector3<f64>,
    pub pulses: Vec<TorquePulse>,
    pub damping: f64,
    pub t_damp: f64,
}

impl TorqueProfile {
    pub fn torque_free() -> Self {
        TorqueProfile {
            t_damp: f64::INFINITY,
            ..Default::default()
        }
    }

    /// Control torque applied during the step starting at `t`.
    pub fn control_at(&self, t: f64) -> Vector3<f64> {
        self.pulses
            .iter()
            .filter(|p| t >= p.start && t < p.start + p.duration)
            .fold(self.control, |acc, p| acc + Vector3::from(p.torque))
    }

    /// Damping coefficient in force during the step starting at `t`.
    pub fn damping_at(&self, t: f64) -> f64 {
        if t >= self.t_damp {
            self.damping
        } else {
            0.0
        }
    }
}

/// Ground-truth spacecraft state. `bias` and `misalignment` are constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthState {
    pub q: Quaternion,
    pub omega: Vector3<f64>,
    pub bias: Vector3<f64>,
    pub misalignment: Vector3<f64>,
}

/// `ω̇ = J⁻¹ (M_c - ω × (J ω) - D ω)`.
pub fn omega_dot(
    omega: &Vector3<f64>,
    inertia: &InertiaMatrix,
    control: &Vector3<f64>,
    damping: f64,
) -> Vector3<f64> {
    let h = inertia.matrix() * omega;
    inertia.inverse() * (control - omega.cross(&h) - damping * omega)
}

/// One RK4 step of the coupled attitude/rate equations with the torque held
/// at its step-start value. The returned quaternion is renormalized.
pub fn rk4_attitude_rate(
    q: &Quaternion,
    omega: &Vector3<f64>,
    inertia: &InertiaMatrix,
    control: &Vector3<f64>,
    damping: f64,
    dt: f64,
) -> (Quaternion, Vector3<f64>) {
    let f = |q: &Quaternion, w: &Vector3<f64>| {
        (
            quaternion_rate(q, w),
            omega_dot(w, inertia, control, damping),
        )
    };
    let add = |q: &Quaternion, dq: &Quaternion, h: f64| Quaternion {
        v: q.v + h * dq.v,
        s: q.s + h * dq.s,
    };

    let (kq1, kw1) = f(q, omega);
    let (kq2, kw2) = f(&add(q, &kq1, 0.5 * dt), &(omega + 0.5 * dt * kw1));
    let (kq3, kw3) = f(&add(q, &kq2, 0.5 * dt), &(omega + 0.5 * dt * kw2));
    let (kq4, kw4) = f(&add(q, &kq3, dt), &(omega + dt * kw3));

    let h = dt / 6.0;
    let q_next = Quaternion {
        v: q.v + h * (kq1.v + 2.0 * kq2.v + 2.0 * kq3.v + kq4.v),
        s: q.s + h * (kq1.s + 2.0 * kq2.s + 2.0 * kq3.s + kq4.s),
    }
    .normalize();
    let w_next = omega + h * (kw1 + 2.0 * kw2 + 2.0 * kw3 + kw4);
    (q_next, w_next)
}

/// Advances the truth state from `t` to `t + dt`.
pub fn propagate_truth(
    x: &TruthState,
    inertia: &InertiaMatrix,
    torque: &TorqueProfile,
    t: f64,
    dt: f64,
) -> TruthState {
    let (q, omega) = rk4_attitude_rate(
        &x.q,
        &x.omega,
        inertia,
        &torque.control_at(t),
        torque.damping_at(t),
        dt,
    );
    TruthState { q, omega, ..*x }
}

pub fn kinetic_energy(omega: &Vector3<f64>, inertia: &InertiaMatrix) -> f64 {
    0.5 * omega.dot(&(inertia.matrix() * omega))
}

pub fn angular_momentum(omega: &Vector3<f64>, inertia: &InertiaMatrix) -> f64 {
    (inertia.matrix() * omega).norm()
}
