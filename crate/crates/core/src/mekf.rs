//! Nine-state multiplicative extended Kalman filter.
//!
//! Error state ordering is `[δω, δb, δθ]` where `δω = ω - ω̂`, `δb = b - b̂` and
//! `δθ` is the MRP of `δq = q ⊗ q̂*`. The nominal state is propagated with the
//! full nonlinear dynamics. The covariance uses either the block-diagonal
//! transition `Φ = blockdiag(exp(F Δt), I, I)` or, with [`ErrorDynamics::Coupled`],
//! one where the attitude error also integrates the rate error.
//!
//! The covariance and gain depend only on `(ω̂, P)`, never on the attitude, so a
//! bank of filters that share those can compute them once ([`predict_covariance`],
//! [`Gain::compute`]) and apply them per filter ([`predict_nominal`], [`correct`]).

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::attitude::{mrp_to_q, q_to_mrp, qconj, qmult, skew, Mrp, Quaternion};
use crate::dynamics::{rk4_attitude_rate, InertiaMatrix, TorqueProfile};
use crate::error::{Error, Result};
use crate::sensors::sensor_offset;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Vector9 = SVector<f64, 9>;
pub type Vector6 = SVector<f64, 6>;
pub type Gain9x6 = SMatrix<f64, 9, 6>;

pub const OMEGA: usize = 0;
pub const BIAS: usize = 3;
pub const ATTITUDE: usize = 6;

/// Innovation covariances with a condition number above this are refused.
const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MekfState {
    pub q: Quaternion,
    pub omega: Vector3<f64>,
    pub bias: Vector3<f64>,
}

/// Error-state covariance, symmetric positive semidefinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorCovariance(pub Matrix9);

impl ErrorCovariance {
    pub fn from_diagonal(d: &Vector9) -> Self {
        ErrorCovariance(Matrix9::from_diagonal(d))
    }

    pub fn block(&self, start: usize) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(start, start).into_owned()
    }

    /// Per-axis standard deviations of the block starting at `start`.
    pub fn sigma(&self, start: usize) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.0[(start + i, start + i)].max(0.0).sqrt())
    }

    pub fn symmetrized(&self) -> Self {
        ErrorCovariance(0.5 * (self.0 + self.0.transpose()))
    }
}

/// Diagonal process and measurement noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Continuous-time process noise spectral densities `[ω, b, θ]`.
    pub q: Vector9,
    /// Measurement noise variances `[attitude MRP; rate]`.
    pub r: Vector6,
}

impl NoiseConfig {
    pub fn r_matrix(&self) -> Matrix6 {
        Matrix6::from_diagonal(&self.r)
    }
}

/// Measurement Jacobian `H = [[0 0 I], [I I 0]]`.
pub fn measurement_matrix() -> SMatrix<f64, 6, 9> {
    let mut h = SMatrix::<f64, 6, 9>::zeros();
    for i in 0..3 {
        h[(i, ATTITUDE + i)] = 1.0;
        h[(3 + i, OMEGA + i)] = 1.0;
        h[(3 + i, BIAS + i)] = 1.0;
    }
    h
}

/// `H P` without the dense product: `[P_θ·; P_ω· + P_b·]`.
fn h_times(p: &Matrix9) -> SMatrix<f64, 6, 9> {
    let mut hp = SMatrix::<f64, 6, 9>::zeros();
    hp.fixed_rows_mut::<3>(0)
        .copy_from(&p.fixed_rows::<3>(ATTITUDE));
    hp.fixed_rows_mut::<3>(3)
        .copy_from(&(p.fixed_rows::<3>(OMEGA) + p.fixed_rows::<3>(BIAS)));
    hp
}

/// `(H P) Hᵀ`, the same selection applied to columns.
fn times_ht(hp: &SMatrix<f64, 6, 9>) -> Matrix6 {
    let mut m = Matrix6::zeros();
    m.fixed_columns_mut::<3>(0)
        .copy_from(&hp.fixed_columns::<3>(ATTITUDE));
    m.fixed_columns_mut::<3>(3)
        .copy_from(&(hp.fixed_columns::<3>(OMEGA) + hp.fixed_columns::<3>(BIAS)));
    m
}

/// Jacobian of `ω̇` with respect to `ω`: `J⁻¹([Jω]× - [ω]× J - D I)`.
pub fn rate_jacobian(omega: &Vector3<f64>, inertia: &InertiaMatrix, damping: f64) -> Matrix3<f64> {
    let j = inertia.matrix();
    inertia.inverse() * (skew(&(j * omega)) - skew(omega) * j - damping * Matrix3::identity())
}

/// `exp(F Δt)` by scaling and squaring with a truncated Taylor series.
pub fn matrix_exponential<const D: usize>(f: &SMatrix<f64, D, D>, dt: f64) -> SMatrix<f64, D, D> {
    let a = f * dt;
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut term = SMatrix::<f64, D, D>::identity();
    let mut sum = SMatrix::<f64, D, D>::identity();
    for k in 1..=taylor_terms(norm / 2f64.powi(squarings)) {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Linearized attitude-error dynamics used when propagating the covariance.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDynamics {
    /// The attitude error only accumulates process noise; `Φ` is the identity
    /// outside its rate block.
    #[default]
    Decoupled,
    /// The attitude error also integrates the rate error:
    /// `δṗ = -[ω̂×] δp + δω / 4` in MRP units.
    Coupled,
}

/// Continuous-time error-state Jacobian.
pub fn error_jacobian(
    omega: &Vector3<f64>,
    inertia: &InertiaMatrix,
    damping: f64,
    dynamics: ErrorDynamics,
) -> Matrix9 {
    let mut f = Matrix9::zeros();
    f.fixed_view_mut::<3, 3>(OMEGA, OMEGA)
        .copy_from(&rate_jacobian(omega, inertia, damping));
    if dynamics == ErrorDynamics::Coupled {
        f.fixed_view_mut::<3, 3>(ATTITUDE, OMEGA)
            .copy_from(&(0.25 * Matrix3::identity()));
        f.fixed_view_mut::<3, 3>(ATTITUDE, ATTITUDE)
            .copy_from(&-skew(omega));
    }
    f
}

/// Non-trivial blocks of `Φ = exp(F Δt)`: `Φ_ωω = a`, `Φ_θω = c`, `Φ_θθ = b`.
/// Every other block is the identity (diagonal) or zero.
#[derive(Clone, Copy, Debug, PartialEq)]
struct TransitionBlocks {
    a: Matrix3<f64>,
    c: Matrix3<f64>,
    b: Matrix3<f64>,
}

impl TransitionBlocks {
    fn new(
        omega: &Vector3<f64>,
        inertia: &InertiaMatrix,
        damping: f64,
        dynamics: ErrorDynamics,
        dt: f64,
    ) -> Self {
        let fw = rate_jacobian(omega, inertia, damping);
        match dynamics {
            ErrorDynamics::Decoupled => TransitionBlocks {
                a: matrix_exponential(&fw, dt),
                c: Matrix3::zeros(),
                b: Matrix3::identity(),
            },
            ErrorDynamics::Coupled => coupled_exponential(&fw, &-skew(omega), dt),
        }
    }

    fn matrix(&self) -> Matrix9 {
        let mut phi = Matrix9::identity();
        phi.fixed_view_mut::<3, 3>(OMEGA, OMEGA).copy_from(&self.a);
        phi.fixed_view_mut::<3, 3>(ATTITUDE, OMEGA)
            .copy_from(&self.c);
        phi.fixed_view_mut::<3, 3>(ATTITUDE, ATTITUDE)
            .copy_from(&self.b);
        phi
    }

    /// `Φ P Φᵀ` touching only the rows and columns that `Φ` mixes.
    fn congruence(&self, p: &Matrix9) -> Matrix9 {
        let mut m = *p;
        let w_rows = self.a * p.fixed_rows::<3>(OMEGA);
        let t_rows = self.c * p.fixed_rows::<3>(OMEGA) + self.b * p.fixed_rows::<3>(ATTITUDE);
        m.fixed_rows_mut::<3>(OMEGA).copy_from(&w_rows);
        m.fixed_rows_mut::<3>(ATTITUDE).copy_from(&t_rows);
        let w_cols = m.fixed_columns::<3>(OMEGA) * self.a.transpose();
        let t_cols = m.fixed_columns::<3>(OMEGA) * self.c.transpose()
            + m.fixed_columns::<3>(ATTITUDE) * self.b.transpose();
        m.fixed_columns_mut::<3>(OMEGA).copy_from(&w_cols);
        m.fixed_columns_mut::<3>(ATTITUDE).copy_from(&t_cols);
        m
    }
}

/// Taylor terms needed so that the remainder bound `xᵏ/k!` falls below 1e-17.
fn taylor_terms(x: f64) -> usize {
    let mut bound = 1.0;
    for k in 1..=18 {
        bound *= x / k as f64;
        if bound < 1e-17 {
            return k;
        }
    }
    18
}

/// `exp([[F, 0], [I/4, W]] Δt)` for the coupled (ω, θ) subsystem, evaluated on its
/// 3×3 blocks by scaling and squaring.
fn coupled_exponential(f: &Matrix3<f64>, w: &Matrix3<f64>, dt: f64) -> TransitionBlocks {
    let block_norm = |m: &Matrix3<f64>| m.abs().row_sum().max();
    let norm = dt.abs() * block_norm(f).max(block_norm(w) + 0.25);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let h = dt / 2f64.powi(squarings);
    let (fa, wb, q) = (f * h, w * h, 0.25 * h);
    let (mut ta, mut tc, mut tb) = (
        Matrix3::<f64>::identity(),
        Matrix3::<f64>::zeros(),
        Matrix3::<f64>::identity(),
    );
    let (mut a, mut c, mut b) = (ta, tc, tb);
    for k in 1..=taylor_terms(norm / 2f64.powi(squarings)) {
        let inv = 1.0 / k as f64;
        tc = (tc * fa + tb * q) * inv;
        ta = ta * fa * inv;
        tb = tb * wb * inv;
        a += ta;
        b += tb;
        c += tc;
    }
    for _ in 0..squarings {
        c = c * a + b * c;
        a = a * a;
        b = b * b;
    }
    TransitionBlocks { a, c, b }
}

/// Discrete transition matrix `Φ = exp(F Δt)`.
pub fn transition_matrix(
    omega: &Vector3<f64>,
    inertia: &InertiaMatrix,
    damping: f64,
    dynamics: ErrorDynamics,
    dt: f64,
) -> Matrix9 {
    TransitionBlocks::new(omega, inertia, damping, dynamics, dt).matrix()
}

/// Propagates the nominal state from `t` to `t + dt` with the filter's torque model.
pub fn predict_nominal(
    state: &MekfState,
    inertia: &InertiaMatrix,
    torque: &TorqueProfile,
    t: f64,
    dt: f64,
) -> MekfState {
    let (q, omega) = rk4_attitude_rate(
        &state.q,
        &state.omega,
        inertia,
        &torque.control_at(t),
        torque.damping_at(t),
        dt,
    );
    MekfState {
        q,
        omega,
        bias: state.bias,
    }
}

/// `P⁻ = Φ P Φᵀ + Q Δt`, symmetrized, with `F` evaluated at the prior `ω̂`.
pub fn predict_covariance(
    p: &ErrorCovariance,
    omega: &Vector3<f64>,
    inertia: &InertiaMatrix,
    damping: f64,
    dynamics: ErrorDynamics,
    noise: &NoiseConfig,
    dt: f64,
) -> ErrorCovariance {
    let mut m = TransitionBlocks::new(omega, inertia, damping, dynamics, dt).congruence(&p.0);
    for i in 0..9 {
        m[(i, i)] += noise.q[i] * dt;
    }
    ErrorCovariance(m).symmetrized()
}

/// Prediction step for one filter.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    state: &MekfState,
    p: &ErrorCovariance,
    inertia: &InertiaMatrix,
    noise: &NoiseConfig,
    torque: &TorqueProfile,
    dynamics: ErrorDynamics,
    t: f64,
    dt: f64,
) -> (MekfState, ErrorCovariance) {
    let p_next = predict_covariance(
        p,
        &state.omega,
        inertia,
        torque.damping_at(t),
        dynamics,
        noise,
        dt,
    );
    (predict_nominal(state, inertia, torque, t, dt), p_next)
}

/// Kalman gain and Joseph-form posterior covariance for a given prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gain {
    pub k: Gain9x6,
    pub posterior: ErrorCovariance,
}

impl Gain {
    pub fn compute(prior: &ErrorCovariance, noise: &NoiseConfig) -> Result<Gain> {
        let hp = h_times(&prior.0);
        let s = times_ht(&hp) + noise.r_matrix();
        let s = 0.5 * (s + s.transpose());
        let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
        // condition estimate from the factor's diagonal, a lower bound on κ(S)
        let d = chol.l_dirty().diagonal();
        let (lo, hi) = (d.min(), d.max());
        if !(lo > 0.0) || (hi / lo).powi(2) > MAX_INNOVATION_CONDITION {
            return Err(Error::SingularInnovation);
        }
        // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ
        let k = chol.solve(&hp).transpose();
        let posterior = joseph_expanded(&prior.0, &k, &hp, &s);
        Ok(Gain { k, posterior })
    }
}

/// `(I - K H) P (I - K H)ᵀ + K R Kᵀ`, symmetrized.
pub fn joseph_update(
    prior: &ErrorCovariance,
    k: &Gain9x6,
    h: &SMatrix<f64, 6, 9>,
    r: &Matrix6,
) -> ErrorCovariance {
    let hp = h * prior.0;
    joseph_expanded(&prior.0, k, &hp, &(hp * h.transpose() + r))
}

/// The Joseph form multiplied out, `P - K H P - (K H P)ᵀ + K S Kᵀ`, which holds for
/// any gain.
fn joseph_expanded(
    p: &Matrix9,
    k: &Gain9x6,
    hp: &SMatrix<f64, 6, 9>,
    s: &Matrix6,
) -> ErrorCovariance {
    let khp = k * hp;
    ErrorCovariance(p - khp - khp.transpose() + k * s * k.transpose()).symmetrized()
}

/// Measurement residual `y = [MRP(q_meas ⊗ q_exp*); ω_meas - (ω̂ + b̂)]` where
/// `q_exp = offset ⊗ q̂`.
pub fn residual_with_offset(
    state: &MekfState,
    q_meas: &Quaternion,
    omega_meas: &Vector3<f64>,
    offset: &Quaternion,
) -> Result<Vector6> {
    let expected = qmult(offset, &state.q);
    let mut dq = qmult(q_meas, &qconj(&expected));
    if dq.s < 0.0 {
        dq = -dq;
    }
    let s_res = q_to_mrp(&dq)?.0;
    let w_res = omega_meas - (state.omega + state.bias);
    Ok(Vector6::new(
        s_res.x, s_res.y, s_res.z, w_res.x, w_res.y, w_res.z,
    ))
}

pub fn residual(
    state: &MekfState,
    q_meas: &Quaternion,
    omega_meas: &Vector3<f64>,
    misalignment: &Vector3<f64>,
) -> Result<Vector6> {
    residual_with_offset(state, q_meas, omega_meas, &sensor_offset(misalignment))
}

/// Applies `δx⁺ = K y` to the nominal state; returns the corrected state and `δx⁺`.
pub fn correct(state: &MekfState, k: &Gain9x6, y: &Vector6) -> (MekfState, Vector9) {
    let dx = k * y;
    let dtheta = Mrp(dx.fixed_rows::<3>(ATTITUDE).into_owned());
    let q = qmult(&mrp_to_q(&dtheta), &state.q);
    let corrected = MekfState {
        q,
        omega: state.omega + dx.fixed_rows::<3>(OMEGA),
        bias: state.bias + dx.fixed_rows::<3>(BIAS),
    };
    (corrected, dx)
}

/// Full measurement update; the returned residual is the pre-update innovation.
pub fn update(
    state: &MekfState,
    p: &ErrorCovariance,
    q_meas: &Quaternion,
    omega_meas: &Vector3<f64>,
    misalignment: &Vector3<f64>,
    noise: &NoiseConfig,
) -> Result<(MekfState, ErrorCovariance, Vector6)> {
    let y = residual(state, q_meas, omega_meas, misalignment)?;
    let gain = Gain::compute(p, noise)?;
    let (corrected, _) = correct(state, &gain.k, &y);
    Ok((corrected, gain.posterior, y))
}

/// One filter instance: nominal state, covariance and the most recent error-state
/// mean. The error state is zero except between a correction and [`Mekf::reset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mekf {
    pub state: MekfState,
    pub covariance: ErrorCovariance,
    pub error: Vector9,
}

impl Mekf {
    pub fn new(state: MekfState, covariance: ErrorCovariance) -> Self {
        Mekf {
            state,
            covariance,
            error: Vector9::zeros(),
        }
    }

    pub fn predict(
        &mut self,
        inertia: &InertiaMatrix,
        noise: &NoiseConfig,
        torque: &TorqueProfile,
        dynamics: ErrorDynamics,
        t: f64,
        dt: f64,
    ) {
        let (state, p) = predict(
            &self.state,
            &self.covariance,
            inertia,
            noise,
            torque,
            dynamics,
            t,
            dt,
        );
        self.state = state;
        self.covariance = p;
    }

    /// Applies a precomputed gain. Leaves `error` holding `δx⁺`; call [`Mekf::reset`].
    pub fn apply(&mut self, gain: &Gain, y: &Vector6) {
        let (state, dx) = correct(&self.state, &gain.k, y);
        self.state = state;
        self.covariance = gain.posterior;
        self.error = dx;
    }

    /// Update followed by reset. Returns the innovation.
    pub fn update(
        &mut self,
        q_meas: &Quaternion,
        omega_meas: &Vector3<f64>,
        offset: &Quaternion,
        noise: &NoiseConfig,
    ) -> Result<Vector6> {
        let y = residual_with_offset(&self.state, q_meas, omega_meas, offset)?;
        let gain = Gain::compute(&self.covariance, noise)?;
        self.apply(&gain, &y);
        self.reset();
        Ok(y)
    }

    /// Zeroes the error-state mean; the nominal state already carries the correction.
    pub fn reset(&mut self) {
        self.error = Vector9::zeros();
    }
}

/// Free-function form of [`Mekf::reset`].
pub fn reset(state: &MekfState, p: &ErrorCovariance) -> (MekfState, ErrorCovariance) {
    (*state, *p)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::attitude::{angle_between, skew};

    fn inertia() -> InertiaMatrix {
        InertiaMatrix::diagonal(100.0, 60.0, 50.0).unwrap()
    }

    fn table_noise() -> NoiseConfig {
        NoiseConfig {
            q: Vector9::from_column_slice(&[
                1e-12, 1e-12, 1e-12, 2.5e-15, 2.5e-15, 2.5e-15, 2.5e-13, 2.5e-13, 2.5e-13,
            ]),
            r: Vector6::from_column_slice(&[
                7.6213e-7, 7.6213e-7, 7.6213e-7, 2.5e-7, 2.5e-7, 2.5e-7,
            ]),
        }
    }

    fn p0() -> ErrorCovariance {
        ErrorCovariance::from_diagonal(&Vector9::from_column_slice(&[
            1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6, 1.0, 1.0, 1.0,
        ]))
    }

    fn state() -> MekfState {
        MekfState {
            q: Quaternion::new(0.1, 0.2, -0.3, 0.9).normalize(),
            omega: Vector3::new(0.05236, 0.07679, -0.08727),
            bias: Vector3::new(1e-4, -2e-4, 3e-4),
        }
    }

    fn is_psd(p: &Matrix9) -> bool {
        p.symmetric_eigenvalues().min() >= -1e-12
    }

    #[test]
    fn zero_rate_and_zero_noise_leave_covariance_unchanged() {
        let noise = NoiseConfig {
            q: Vector9::zeros(),
            ..table_noise()
        };
        let p = predict_covariance(
            &p0(),
            &Vector3::zeros(),
            &inertia(),
            0.0,
            ErrorDynamics::Decoupled,
            &noise,
            0.5,
        );
        assert_eq!(p, p0());
    }

    #[test]
    fn process_noise_inflates_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_psd(&mut rng);
        let noise = table_noise();
        let next = predict_covariance(
            &p,
            &Vector3::zeros(),
            &inertia(),
            0.0,
            ErrorDynamics::Decoupled,
            &noise,
            0.5,
        );
        assert_relative_eq!(
            next.0.trace() - p.0.trace(),
            0.5 * noise.q.sum(),
            epsilon = 1e-15
        );
        assert!(next.0.trace() > p.0.trace());
    }

    #[test]
    fn jacobian_entry_and_finite_differences() {
        let w = Vector3::new(0.05236, 0.07679, -0.08727);
        let f = rate_jacobian(&w, &inertia(), 0.0);
        assert_relative_eq!(f[(0, 1)], -0.008727, epsilon = 1e-12);
        // central differences of ω̇(ω)
        let h = 1e-6;
        for c in 0..3 {
            let mut dw = Vector3::zeros();
            dw[c] = h;
            let plus = crate::dynamics::omega_dot(&(w + dw), &inertia(), &Vector3::zeros(), 0.3);
            let minus = crate::dynamics::omega_dot(&(w - dw), &inertia(), &Vector3::zeros(), 0.3);
            let fd = (plus - minus) / (2.0 * h);
            let col = rate_jacobian(&w, &inertia(), 0.3).column(c).into_owned();
            assert!((fd - col).norm() < 1e-9, "column {c}");
        }
    }

    #[test]
    fn blockwise_prediction_matches_full_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_psd(&mut rng);
        let w = Vector3::new(0.05, -0.02, 0.08);
        for dynamics in [ErrorDynamics::Decoupled, ErrorDynamics::Coupled] {
            let phi = transition_matrix(&w, &inertia(), 0.0, dynamics, 0.5);
            let q = Matrix9::from_diagonal(&(table_noise().q * 0.5));
            let full = phi * p.0 * phi.transpose() + q;
            let fast = predict_covariance(&p, &w, &inertia(), 0.0, dynamics, &table_noise(), 0.5);
            assert!((full - fast.0).norm() < 1e-14, "{dynamics:?}");
        }
    }

    #[test]
    fn transition_matches_dense_exponential() {
        let w = Vector3::new(0.05236, 0.07679, -0.08727);
        for dynamics in [ErrorDynamics::Decoupled, ErrorDynamics::Coupled] {
            let f = error_jacobian(&w, &inertia(), 0.6, dynamics);
            let dense = (f * 0.5).exp();
            let phi = transition_matrix(&w, &inertia(), 0.6, dynamics, 0.5);
            assert!((dense - phi).norm() < 1e-12, "{dynamics:?}");
        }
    }

    #[test]
    fn coupled_exponential_handles_long_steps() {
        // large Δt forces several squarings
        let w = Vector3::new(0.3, -0.2, 0.4);
        let f = error_jacobian(&w, &inertia(), 0.6, ErrorDynamics::Coupled);
        let dense = (f * 20.0).exp();
        let phi = transition_matrix(&w, &inertia(), 0.6, ErrorDynamics::Coupled, 20.0);
        assert!((dense - phi).norm() < 1e-10 * dense.norm());
    }

    #[test]
    fn coupled_transition_carries_rate_error_into_attitude() {
        let w = Vector3::new(0.0, 0.0, 0.0);
        let phi = transition_matrix(&w, &inertia(), 0.0, ErrorDynamics::Coupled, 2.0);
        // With zero rate the attitude block integrates δω/4 linearly.
        let block = phi.fixed_view::<3, 3>(ATTITUDE, OMEGA).into_owned();
        assert!((block - Matrix3::identity() * 0.5).norm() < 1e-14);
        let decoupled = transition_matrix(&w, &inertia(), 0.0, ErrorDynamics::Decoupled, 2.0);
        assert_eq!(
            decoupled.fixed_view::<3, 3>(ATTITUDE, OMEGA).into_owned(),
            Matrix3::zeros()
        );
        assert_eq!(
            phi.fixed_view::<3, 3>(BIAS, BIAS).into_owned(),
            Matrix3::identity()
        );
    }

    #[test]
    fn matrix_exponential_properties() {
        assert_eq!(
            matrix_exponential(&Matrix3::zeros(), 0.5),
            Matrix3::identity()
        );
        let f = rate_jacobian(&Vector3::new(0.05236, 0.07679, -0.08727), &inertia(), 0.6);
        let prod = matrix_exponential(&f, 0.5) * matrix_exponential(&f, -0.5);
        assert!((prod - Matrix3::identity()).norm() < 1e-10);
        // Rodrigues closed form for a skew generator
        let a = 0.3;
        let got = matrix_exponential(&skew(&Vector3::new(0.0, 0.0, a)), 2.0);
        let (s, c) = (a * 2.0f64).sin_cos();
        let expected = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        assert!((got - expected).norm() < 1e-14);
        // scaling-and-squaring branch against nalgebra's Padé implementation
        let big = Matrix3::new(0.3, -1.2, 0.5, 0.8, -0.1, 0.4, -0.6, 0.9, 0.2);
        assert!((matrix_exponential(&big, 3.0) - (big * 3.0).exp()).norm() < 1e-11);
        let small = big * 0.05;
        assert!((matrix_exponential(&small, 1.0) - small.exp()).norm() < 1e-14);
    }

    #[test]
    fn zero_residual_update_keeps_state_and_shrinks_covariance() {
        let x = state();
        let mu = Vector3::new(1e-3, -2e-3, 0.5e-3);
        let q_meas = qmult(&sensor_offset(&mu), &x.q);
        let w_meas = x.omega + x.bias;
        let (post, p_post, y) = update(&x, &p0(), &q_meas, &w_meas, &mu, &table_noise()).unwrap();
        assert!(y.norm() < 1e-15);
        assert!(angle_between(&post.q, &x.q) < 1e-15);
        assert!((post.omega - x.omega).norm() < 1e-18);
        assert!(p_post.0.trace() <= p0().0.trace());
    }

    #[test]
    fn attitude_gain_is_decoupled_for_block_diagonal_prior() {
        let gain = Gain::compute(&p0(), &table_noise()).unwrap();
        // attitude rows respond only to the attitude residual
        for r in ATTITUDE..ATTITUDE + 3 {
            for c in 3..6 {
                assert_eq!(gain.k[(r, c)], 0.0);
            }
        }
        for r in 0..6 {
            for c in 0..3 {
                assert_eq!(gain.k[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn scalar_gain_reduction() {
        let r = 0.25;
        let noise = NoiseConfig {
            q: Vector9::zeros(),
            r: Vector6::repeat(r),
        };
        let gain = Gain::compute(&ErrorCovariance(Matrix9::identity()), &noise).unwrap();
        for i in 0..3 {
            assert_relative_eq!(gain.k[(ATTITUDE + i, i)], 1.0 / (1.0 + r), epsilon = 1e-15);
        }
    }

    #[test]
    fn singular_innovation_is_refused() {
        let noise = NoiseConfig {
            q: Vector9::zeros(),
            r: Vector6::zeros(),
        };
        let degenerate = ErrorCovariance(Matrix9::zeros());
        assert!(matches!(
            Gain::compute(&degenerate, &noise),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn reset_is_idempotent_and_preserves_nominal() {
        let mut f = Mekf::new(state(), p0());
        let gain = Gain::compute(&p0(), &table_noise()).unwrap();
        f.apply(&gain, &Vector6::new(1e-3, 0.0, 0.0, 1e-4, 0.0, 0.0));
        assert!(f.error.norm() > 0.0);
        let (q, p) = (f.state.q, f.covariance);
        f.reset();
        let once = f;
        f.reset();
        assert_eq!(f, once);
        assert_eq!(f.state.q, q);
        assert_eq!(f.covariance, p);
        assert_eq!(f.error, Vector9::zeros());
        assert_eq!(reset(&f.state, &f.covariance), (f.state, f.covariance));
    }

    #[test]
    fn noiseless_filter_keeps_zero_residuals() {
        use crate::dynamics::{propagate_truth, TruthState};
        let j = inertia();
        let torque = TorqueProfile::torque_free();
        let mut truth = TruthState {
            q: state().q,
            omega: state().omega,
            bias: Vector3::new(2e-4, 0.0, -1e-4),
            misalignment: Vector3::new(1e-3, 2e-3, 0.0),
        };
        let mut f = Mekf::new(
            MekfState {
                q: truth.q,
                omega: truth.omega,
                bias: truth.bias,
            },
            p0(),
        );
        let offset = sensor_offset(&truth.misalignment);
        let noise = table_noise();
        for k in 0..1000 {
            let t = k as f64 * 0.5;
            truth = propagate_truth(&truth, &j, &torque, t, 0.5);
            f.predict(&j, &noise, &torque, ErrorDynamics::Decoupled, t, 0.5);
            let q_meas = qmult(&offset, &truth.q);
            let y = f
                .update(&q_meas, &(truth.omega + truth.bias), &offset, &noise)
                .unwrap();
            assert!(y.norm() <= 1e-8, "step {k}: residual {}", y.norm());
        }
    }

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut impl Rng) -> ErrorCovariance {
        let a = Matrix9::from_fn(|_, _| rng.random_range(-1.0..1.0));
        ErrorCovariance(a * a.transpose() * 1e-3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn joseph_form_preserves_psd_for_any_gain(seed in any::<u64>(), scale in 0.0..5.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = random_psd(&mut rng);
            let noise = table_noise();
            let optimal = Gain::compute(&prior, &noise).unwrap();
            let perturbed = optimal.k * scale + Gain9x6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let post = joseph_update(&prior, &perturbed, &measurement_matrix(), &noise.r_matrix());
            prop_assert!((post.0 - post.0.transpose()).norm() <= 1e-9);
            prop_assert!(is_psd(&post.0));
            let h = measurement_matrix();
            let ikh = Matrix9::identity() - perturbed * h;
            let product = ikh * prior.0 * ikh.transpose() + perturbed * noise.r_matrix() * perturbed.transpose();
            prop_assert!((post.0 - product).norm() <= 1e-12 * (1.0 + product.norm()));
        }

        #[test]
        fn prediction_stays_symmetric_psd(seed in any::<u64>(), wx in -0.2..0.2f64, wy in -0.2..0.2f64, wz in -0.2..0.2f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_psd(&mut rng);
            for dynamics in [ErrorDynamics::Decoupled, ErrorDynamics::Coupled] {
                let next = predict_covariance(&p, &Vector3::new(wx, wy, wz), &inertia(), 0.6, dynamics, &table_noise(), 0.5);
                prop_assert!((next.0 - next.0.transpose()).norm() <= 1e-9);
                prop_assert!(is_psd(&next.0));
            }
        }
    }
}
