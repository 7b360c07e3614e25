#ifndef TMMSE_H
#define TMMSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every API call.
 */
typedef enum TmmseStatus {
  TmmseStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  TmmseStatus_NullPointer = 1,
  /**
   * Scenario parameters or sample counts are out of range.
   */
  TmmseStatus_InvalidArgument = 2,
  /**
   * The computation failed numerically (singular statistics, degenerate
   * SINR, ...).
   */
  TmmseStatus_NumericalFailure = 3,
  /**
   * The scheme tag does not name a known precoding scheme.
   */
  TmmseStatus_UnknownScheme = 4,
  /**
   * Serializing the scenario failed.
   */
  TmmseStatus_SerializationFailure = 5,
  /**
   * A panic was caught at the language boundary.
   */
  TmmseStatus_Panic = 6,
} TmmseStatus;

/**
 * Opaque scenario handle.
 */
typedef struct TmmseScenario TmmseScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a circular radio-stripe scenario: `tx_count` transmitters evenly
 * spaced on a circle of radius `stripe_radius_m`, `user_count` users
 * placed uniformly in the concentric disc of radius `user_disc_radius_m`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one
 * `TmmseScenario*`. On success it receives an owned handle that must be
 * released with [`tmmse_scenario_free`]; on failure it is left untouched.
 */
enum TmmseStatus tmmse_scenario_radio_stripe(uintptr_t tx_count,
                                             uintptr_t antennas_per_tx,
                                             uintptr_t user_count,
                                             double stripe_radius_m,
                                             double user_disc_radius_m,
                                             uint64_t seed,
                                             struct TmmseScenario **out);

/**
 * Create a scenario with unit channel gains everywhere, Rayleigh fading
 * and perfect channel estimates. `per_user_power` is the transmit power
 * budget per user in mW.
 *
 * # Safety
 * Same contract as [`tmmse_scenario_radio_stripe`].
 */
enum TmmseStatus tmmse_scenario_iid(uintptr_t tx_count,
                                    uintptr_t antennas_per_tx,
                                    uintptr_t user_count,
                                    double per_user_power,
                                    struct TmmseScenario **out);

/**
 * Release a scenario handle. Passing null is a no-op.
 *
 * # Safety
 * `scenario` must be null or a handle obtained from a `tmmse_scenario_*`
 * constructor that has not been freed yet.
 */
void tmmse_scenario_free(struct TmmseScenario *scenario);

/**
 * Number of users in the scenario.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer to one
 * `uintptr_t`.
 */
enum TmmseStatus tmmse_scenario_user_count(const struct TmmseScenario *scenario, uintptr_t *out);

/**
 * Serialize the scenario to a JSON document.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer to one
 * `char*`. On success `*out` receives an owned NUL-terminated string that
 * must be released with [`tmmse_string_free`].
 */
enum TmmseStatus tmmse_scenario_json(const struct TmmseScenario *scenario, char **out);

/**
 * Release a string returned by this library. Passing null is a no-op.
 *
 * # Safety
 * `s` must be null or a string obtained from this library that has not
 * been freed yet.
 */
void tmmse_string_free(char *s);

/**
 * Evaluate one precoding scheme on a scenario and report per-user
 * ergodic rates under the hardening bound.
 *
 * `scheme_tag` selects the scheme by its serialized name (`"mrt"`,
 * `"local_tmmse"`, `"uni_tmmse"`, `"seq_zf"`, `"sgd"`, `"sgd_robust"`,
 * `"obe"`, `"local_mmse_lsfd"`, `"centralized_recursive"`,
 * `"centralized_direct"`). `m_stats` sets the sample count used to learn
 * long-term statistics (at least 2) and `m_eval` the Monte-Carlo
 * evaluation sample count (at least 1).
 *
 * Each output array may independently be null to skip that quantity;
 * non-null arrays must hold one `double` per user. `rate_bits` receives
 * rates in bits per channel use, `mse` the per-user mean square error,
 * `sinr_db` the effective SINR in dB and `p_mw` the allocated downlink
 * power in mW.
 *
 * # Safety
 * `scenario` must be a live handle, `scheme_tag` a valid NUL-terminated
 * string, and every non-null output array valid for `user_count` writes.
 */
enum TmmseStatus tmmse_evaluate(const struct TmmseScenario *scenario,
                                const char *scheme_tag,
                                uintptr_t m_stats,
                                uintptr_t m_eval,
                                uint64_t seed,
                                double *rate_bits,
                                double *mse,
                                double *sinr_db,
                                double *p_mw);

/**
 * Static description of a status code. Never returns null and the
 * returned string must not be freed.
 */
const char *tmmse_status_message(enum TmmseStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TMMSE_H */
