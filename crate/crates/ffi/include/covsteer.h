#ifndef COVSTEER_H
#define COVSTEER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_UTF8 = 2,
  CS_STATUS_IO = 3,
  CS_STATUS_VALIDATION = 4,
  CS_STATUS_NO_CONVERGENCE = 5,
  CS_STATUS_INFEASIBLE = 6,
  CS_STATUS_WRONG_KIND = 7,
  CS_STATUS_BUFFER_TOO_SMALL = 8,
  CS_STATUS_PANIC = 9,
} CsStatus;

/*
 Solver used by [`cs_steer`].
 */
typedef enum CsMethod {
  CS_METHOD_SHOOTING = 0,
  CS_METHOD_MINIMAX = 1,
} CsMethod;

/*
 A finite-horizon incentive (terminal cost and Nash law).
 */
typedef struct CsIncentive CsIncentive;

/*
 A parsed, validated scenario.
 */
typedef struct CsScenario CsScenario;

/*
 A stationary incentive (running state cost and gains).
 */
typedef struct CsStationary CsStationary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next `cs_*` call on the same thread.
 */
const char *cs_last_error_message(void);

/*
 Frees a string returned by a `*_to_json` function.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void cs_string_free(char *s);

/*
 Parses and validates a scenario document.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_scenario_from_json(const char *json, struct CsScenario **out);

/*
 # Safety
 `s` must come from [`cs_scenario_from_json`] or be NULL.
 */
void cs_scenario_free(struct CsScenario *s);

/*
 State dimension n, or 0 for NULL.

 # Safety
 `s` must be a live scenario handle or NULL.
 */
uintptr_t cs_scenario_state_dim(const struct CsScenario *s);

/*
 1 for a stationary scenario, 0 for a finite-horizon one or NULL.

 # Safety
 `s` must be a live scenario handle or NULL.
 */
int32_t cs_scenario_is_stationary(const struct CsScenario *s);

/*
 Synthesizes the terminal cost of a finite-horizon scenario.

 # Safety
 `scenario` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_steer(const struct CsScenario *scenario,
                       enum CsMethod method,
                       struct CsIncentive **out);

/*
 # Safety
 `h` must come from [`cs_steer`] or be NULL.
 */
void cs_incentive_free(struct CsIncentive *h);

/*
 State dimension n of the terminal cost, or 0 for NULL.

 # Safety
 `h` must be a live handle or NULL.
 */
uintptr_t cs_incentive_dim(const struct CsIncentive *h);

/*
 Writes the n×n terminal cost F row-major into `out[0..len]`.

 # Safety
 `h` must be a live handle; `out` must hold `len` doubles.
 */
enum CsStatus cs_incentive_terminal_cost(const struct CsIncentive *h, double *out, uintptr_t len);

/*
 Relative terminal covariance residual, NaN for NULL.

 # Safety
 `h` must be a live handle or NULL.
 */
double cs_incentive_terminal_residual(const struct CsIncentive *h);

/*
 Solution document as a newly allocated JSON string (free with
 [`cs_string_free`]), or NULL on failure.

 # Safety
 `h` must be a live handle or NULL.
 */
char *cs_incentive_to_json(const struct CsIncentive *h);

/*
 Synthesizes the running state cost of a stationary scenario. A solve
 whose regularization fails returns `NoConvergence` and no handle.

 # Safety
 `scenario` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_stationary_solve(const struct CsScenario *scenario, struct CsStationary **out);

/*
 # Safety
 `h` must come from [`cs_stationary_solve`] or be NULL.
 */
void cs_stationary_free(struct CsStationary *h);

/*
 Writes the n×n state cost Q row-major into `out[0..len]`.

 # Safety
 `h` must be a live handle; `out` must hold `len` doubles.
 */
enum CsStatus cs_stationary_state_cost(const struct CsStationary *h, double *out, uintptr_t len);

/*
 Writes the m×n player-1 gain row-major into `out[0..len]`.

 # Safety
 `h` must be a live handle; `out` must hold `len` doubles.
 */
enum CsStatus cs_stationary_gain1(const struct CsStationary *h, double *out, uintptr_t len);

/*
 Writes the p×n player-2 gain row-major into `out[0..len]`.

 # Safety
 `h` must be a live handle; `out` must hold `len` doubles.
 */
enum CsStatus cs_stationary_gain2(const struct CsStationary *h, double *out, uintptr_t len);

/*
 Hurwitz margin of the closed loop, NaN for NULL.

 # Safety
 `h` must be a live handle or NULL.
 */
double cs_stationary_hurwitz_margin(const struct CsStationary *h);

/*
 Regularization used (0 when none was needed), NaN for NULL.

 # Safety
 `h` must be a live handle or NULL.
 */
double cs_stationary_epsilon_used(const struct CsStationary *h);

/*
 Solution document as a newly allocated JSON string (free with
 [`cs_string_free`]), or NULL on failure.

 # Safety
 `h` must be a live handle or NULL.
 */
char *cs_stationary_to_json(const struct CsStationary *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVSTEER_H */
