//! C ABI over the `mmae-attitude` online estimator.
//!
//! Every function returns an [`MmaeStatus`]; on failure a message is available from
//! [`mmae_last_error_message`] on the calling thread. Quaternions are `[x, y, z, s]`
//! (scalar last), vectors are `[x, y, z]`. Handles come from [`mmae_estimator_new`]
//! and must be released with [`mmae_estimator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mmae_attitude::attitude::Quaternion;
use mmae_attitude::estimator::MmaeEstimator as Inner;
use mmae_attitude::harness::SimConfig;
use mmae_attitude::sensors::triad;
use mmae_attitude::Error;
use nalgebra::Vector3;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    InvalidArgument = 3,
    ShadowSingularity = 4,
    SingularInertia = 5,
    CollinearVectors = 6,
    SingularInnovation = 7,
    DegenerateWeights = 8,
    DegenerateSpectrum = 9,
    Panic = 10,
    Internal = 11,
}

/// Opaque estimator handle.
pub struct MmaeEstimator(Inner);

/// Outcome of one [`mmae_estimator_step`].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MmaeStepReport {
    /// Hypothesis diversity after the weight update, percent.
    pub psi: f64,
    pub refined: bool,
    pub pruned: usize,
    /// False when the innovation covariance was refused and filters only propagated.
    pub updated: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MmaeStatus {
    match e {
        Error::ShadowSingularity { .. } => MmaeStatus::ShadowSingularity,
        Error::SingularInertia => MmaeStatus::SingularInertia,
        Error::CollinearVectors { .. } => MmaeStatus::CollinearVectors,
        Error::SingularInnovation => MmaeStatus::SingularInnovation,
        Error::DegenerateWeights => MmaeStatus::DegenerateWeights,
        Error::DegenerateSpectrum { .. } => MmaeStatus::DegenerateSpectrum,
        Error::Config(_) => MmaeStatus::InvalidConfig,
        _ => MmaeStatus::Internal,
    }
}

struct Failure(MmaeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MmaeStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MmaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmaeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            MmaeStatus::Panic
        }
    }
}

unsafe fn read<const N: usize>(p: *const f64, what: &str) -> Result<[f64; N], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let mut out = [0.0; N];
    ptr::copy_nonoverlapping(p, out.as_mut_ptr(), N);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Failure(
            MmaeStatus::InvalidArgument,
            format!("{what} has a non-finite entry"),
        ));
    }
    Ok(out)
}

unsafe fn write<const N: usize>(p: *mut f64, values: [f64; N], what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), p, N);
    Ok(())
}

unsafe fn quaternion(p: *const f64, what: &str) -> Result<Quaternion, Failure> {
    let q = Quaternion::from_array(read::<4>(p, what)?);
    if q.norm() < 1e-12 {
        return Err(Failure(
            MmaeStatus::InvalidArgument,
            format!("{what} has zero norm"),
        ));
    }
    Ok(q.normalize())
}

unsafe fn vector(p: *const f64, what: &str) -> Result<Vector3<f64>, Failure> {
    Ok(Vector3::from(read::<3>(p, what)?))
}

unsafe fn handle<'a>(est: *const MmaeEstimator) -> Result<&'a Inner, Failure> {
    est.as_ref().map(|e| &e.0).ok_or_else(|| null("estimator"))
}

/// Message for the most recent failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmae_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code; unknown codes get a generic text. Takes a
/// plain integer so any value coming from C is safe to pass.
#[no_mangle]
pub extern "C" fn mmae_status_string(status: i32) -> *const c_char {
    let s: &'static CStr = match status {
        0 => c"ok",
        1 => c"null pointer argument",
        2 => c"invalid configuration",
        3 => c"invalid argument",
        4 => c"quaternion at the MRP shadow singularity",
        5 => c"inertia matrix is not invertible",
        6 => c"collinear TRIAD vectors",
        7 => c"singular innovation covariance",
        8 => c"hypothesis weights vanished",
        9 => c"ambiguous quaternion average",
        10 => c"internal panic",
        11 => c"internal error",
        _ => c"unknown status",
    };
    s.as_ptr()
}

/// Creates an estimator from a TOML configuration (null for the defaults), an
/// initial attitude fix `q0`, initial rate `omega0` (rad/s) and start time `t0` (s).
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated UTF-8 string; `q0` must point to 4
/// doubles, `omega0` to 3; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_new(
    config_toml: *const c_char,
    q0: *const f64,
    omega0: *const f64,
    t0: f64,
    out: *mut *mut MmaeEstimator,
) -> MmaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = if config_toml.is_null() {
            SimConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml).to_str().map_err(|e| {
                Failure(
                    MmaeStatus::InvalidConfig,
                    format!("configuration is not UTF-8: {e}"),
                )
            })?;
            SimConfig::from_toml(text)?
        };
        let q0 = quaternion(q0, "q0")?;
        let omega0 = vector(omega0, "omega0")?;
        let inner = Inner::new(cfg.estimator_config()?, q0, omega0, t0)?;
        *out = Box::into_raw(Box::new(MmaeEstimator(inner)));
        Ok(())
    })
}

/// Releases a handle. Null is accepted and ignored.
///
/// # Safety
/// `est` must be null or a handle from [`mmae_estimator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_free(est: *mut MmaeEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Advances one time step and processes the star-tracker quaternion `q_meas` and
/// gyro reading `omega_meas` taken at the new time. `report` may be null.
///
/// # Safety
/// `est` must be a live handle; `q_meas` must point to 4 doubles, `omega_meas` to 3;
/// `report` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_step(
    est: *mut MmaeEstimator,
    q_meas: *const f64,
    omega_meas: *const f64,
    report: *mut MmaeStepReport,
) -> MmaeStatus {
    guard(|| {
        let est = est.as_mut().ok_or_else(|| null("estimator"))?;
        let q = quaternion(q_meas, "q_meas")?;
        let w = vector(omega_meas, "omega_meas")?;
        let r = est.0.step(&q, &w)?;
        if let Some(out) = report.as_mut() {
            *out = MmaeStepReport {
                psi: r.psi,
                refined: r.refined,
                pruned: r.pruned,
                updated: r.updated,
            };
        }
        Ok(())
    })
}

/// Fused attitude estimate, `[x, y, z, s]`.
///
/// # Safety
/// `est` must be a live handle; `q_out` must point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_attitude(
    est: *const MmaeEstimator,
    q_out: *mut f64,
) -> MmaeStatus {
    guard(|| write(q_out, handle(est)?.attitude().to_array(), "q_out"))
}

/// Weighted-mean misalignment estimate, rad.
///
/// # Safety
/// `est` must be a live handle; `mu_out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_misalignment(
    est: *const MmaeEstimator,
    mu_out: *mut f64,
) -> MmaeStatus {
    guard(|| write(mu_out, handle(est)?.misalignment().into(), "mu_out"))
}

/// Weighted-mean angular velocity estimate, rad/s.
///
/// # Safety
/// `est` must be a live handle; `omega_out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_rate(
    est: *const MmaeEstimator,
    omega_out: *mut f64,
) -> MmaeStatus {
    guard(|| write(omega_out, handle(est)?.rate().into(), "omega_out"))
}

/// Weighted-mean gyro bias estimate, rad/s.
///
/// # Safety
/// `est` must be a live handle; `bias_out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_bias(
    est: *const MmaeEstimator,
    bias_out: *mut f64,
) -> MmaeStatus {
    guard(|| write(bias_out, handle(est)?.bias().into(), "bias_out"))
}

/// Current hypothesis diversity Ψ, percent.
///
/// # Safety
/// `est` must be a live handle; `psi_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_psi(
    est: *const MmaeEstimator,
    psi_out: *mut f64,
) -> MmaeStatus {
    guard(|| write(psi_out, [handle(est)?.psi()], "psi_out"))
}

/// Time of the latest processed measurement, s.
///
/// # Safety
/// `est` must be a live handle; `t_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_time(
    est: *const MmaeEstimator,
    t_out: *mut f64,
) -> MmaeStatus {
    guard(|| write(t_out, [handle(est)?.time()], "t_out"))
}

/// Number of live hypotheses.
///
/// # Safety
/// `est` must be a live handle; `count_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_hypothesis_count(
    est: *const MmaeEstimator,
    count_out: *mut usize,
) -> MmaeStatus {
    guard(|| {
        let n = handle(est)?.bank().len();
        *count_out.as_mut().ok_or_else(|| null("count_out"))? = n;
        Ok(())
    })
}

/// Number of lattice refinements so far.
///
/// # Safety
/// `est` must be a live handle; `count_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmae_estimator_refinements(
    est: *const MmaeEstimator,
    count_out: *mut usize,
) -> MmaeStatus {
    guard(|| {
        let n = handle(est)?.bank().refinements_done;
        *count_out.as_mut().ok_or_else(|| null("count_out"))? = n;
        Ok(())
    })
}

/// TRIAD attitude from two reference directions and their body-frame observations;
/// `v1` is the more accurate pair. Writes `[x, y, z, s]` with non-negative scalar part.
///
/// # Safety
/// Each input must point to 3 doubles and `q_out` to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmae_triad(
    v1_inertial: *const f64,
    v2_inertial: *const f64,
    v1_body: *const f64,
    v2_body: *const f64,
    q_out: *mut f64,
) -> MmaeStatus {
    guard(|| {
        let q = triad(
            &vector(v1_inertial, "v1_inertial")?,
            &vector(v2_inertial, "v2_inertial")?,
            &vector(v1_body, "v1_body")?,
            &vector(v2_body, "v2_body")?,
            &Quaternion::IDENTITY,
        )?;
        write(q_out, q.to_array(), "q_out")
    })
}
