#ifndef MMAE_ATTITUDE_H
#define MMAE_ATTITUDE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MmaeStatus {
  MMAE_STATUS_OK = 0,
  MMAE_STATUS_NULL_POINTER = 1,
  MMAE_STATUS_INVALID_CONFIG = 2,
  MMAE_STATUS_INVALID_ARGUMENT = 3,
  MMAE_STATUS_SHADOW_SINGULARITY = 4,
  MMAE_STATUS_SINGULAR_INERTIA = 5,
  MMAE_STATUS_COLLINEAR_VECTORS = 6,
  MMAE_STATUS_SINGULAR_INNOVATION = 7,
  MMAE_STATUS_DEGENERATE_WEIGHTS = 8,
  MMAE_STATUS_DEGENERATE_SPECTRUM = 9,
  MMAE_STATUS_PANIC = 10,
  MMAE_STATUS_INTERNAL = 11,
} MmaeStatus;

// Opaque estimator handle.
typedef struct MmaeEstimator MmaeEstimator;

// Outcome of one [`mmae_estimator_step`].
typedef struct MmaeStepReport {
  // Hypothesis diversity after the weight update, percent.
  double psi;
  bool refined;
  size_t pruned;
  // False when the innovation covariance was refused and filters only propagated.
  bool updated;
} MmaeStepReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none. The pointer
// stays valid until the next failing call on the same thread.
const char *mmae_last_error_message(void);

// Static description of a status code; unknown codes get a generic text. Takes a
// plain integer so any value coming from C is safe to pass.
const char *mmae_status_string(int32_t status);

// Creates an estimator from a TOML configuration (null for the defaults), an
// initial attitude fix `q0`, initial rate `omega0` (rad/s) and start time `t0` (s).
//
// # Safety
// `config_toml` must be null or a NUL-terminated UTF-8 string; `q0` must point to 4
// doubles, `omega0` to 3; `out` must be writable.
enum MmaeStatus mmae_estimator_new(const char *config_toml,
                                   const double *q0,
                                   const double *omega0,
                                   double t0,
                                   struct MmaeEstimator **out);

// Releases a handle. Null is accepted and ignored.
//
// # Safety
// `est` must be null or a handle from [`mmae_estimator_new`] not yet freed.
void mmae_estimator_free(struct MmaeEstimator *est);

// Advances one time step and processes the star-tracker quaternion `q_meas` and
// gyro reading `omega_meas` taken at the new time. `report` may be null.
//
// # Safety
// `est` must be a live handle; `q_meas` must point to 4 doubles, `omega_meas` to 3;
// `report` must be null or writable.
enum MmaeStatus mmae_estimator_step(struct MmaeEstimator *est,
                                    const double *q_meas,
                                    const double *omega_meas,
                                    struct MmaeStepReport *report);

// Fused attitude estimate, `[x, y, z, s]`.
//
// # Safety
// `est` must be a live handle; `q_out` must point to 4 writable doubles.
enum MmaeStatus mmae_estimator_attitude(const struct MmaeEstimator *est, double *q_out);

// Weighted-mean misalignment estimate, rad.
//
// # Safety
// `est` must be a live handle; `mu_out` must point to 3 writable doubles.
enum MmaeStatus mmae_estimator_misalignment(const struct MmaeEstimator *est, double *mu_out);

// Weighted-mean angular velocity estimate, rad/s.
//
// # Safety
// `est` must be a live handle; `omega_out` must point to 3 writable doubles.
enum MmaeStatus mmae_estimator_rate(const struct MmaeEstimator *est, double *omega_out);

// Weighted-mean gyro bias estimate, rad/s.
//
// # Safety
// `est` must be a live handle; `bias_out` must point to 3 writable doubles.
enum MmaeStatus mmae_estimator_bias(const struct MmaeEstimator *est, double *bias_out);

// Current hypothesis diversity Ψ, percent.
//
// # Safety
// `est` must be a live handle; `psi_out` must be writable.
enum MmaeStatus mmae_estimator_psi(const struct MmaeEstimator *est, double *psi_out);

// Time of the latest processed measurement, s.
//
// # Safety
// `est` must be a live handle; `t_out` must be writable.
enum MmaeStatus mmae_estimator_time(const struct MmaeEstimator *est, double *t_out);

// Number of live hypotheses.
//
// # Safety
// `est` must be a live handle; `count_out` must be writable.
enum MmaeStatus mmae_estimator_hypothesis_count(const struct MmaeEstimator *est, size_t *count_out);

// Number of lattice refinements so far.
//
// # Safety
// `est` must be a live handle; `count_out` must be writable.
enum MmaeStatus mmae_estimator_refinements(const struct MmaeEstimator *est, size_t *count_out);

// TRIAD attitude from two reference directions and their body-frame observations;
// `v1` is the more accurate pair. Writes `[x, y, z, s]` with non-negative scalar part.
//
// # Safety
// Each input must point to 3 doubles and `q_out` to 4 writable doubles.
enum MmaeStatus mmae_triad(const double *v1_inertial,
                           const double *v2_inertial,
                           const double *v1_body,
                           const double *v2_body,
                           double *q_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMAE_ATTITUDE_H */
