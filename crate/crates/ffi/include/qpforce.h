#ifndef QPFORCE_H
#define QPFORCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum {
  QP_STATUS_OK = 0,
  QP_STATUS_NULL_POINTER = 1,
  QP_STATUS_INVALID_UTF8 = 2,
  /**
   * The config did not parse or does not describe a valid map.
   */
  QP_STATUS_CONFIG = 3,
  /**
   * A computation rejected its arguments or failed.
   */
  QP_STATUS_COMPUTE = 4,
  QP_STATUS_PANIC = 5,
} QpStatus;

/**
 * Opaque forced circle map.
 */
typedef struct QpMap QpMap;

typedef struct {
  double value;
  double spread;
  uint64_t n_iterates;
} QpRotation;

/**
 * l + kω + qρ = 0 with q > 0.
 */
typedef struct {
  int64_t l;
  int64_t k;
  int64_t q;
  double residual;
} QpRelation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call on the same thread.
 */
const char *qp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qp_version(void);

/**
 * Parses a map config. `format` is "toml" or "json".
 *
 * # Safety
 * `src` and `format` must be NUL-terminated strings; `out` must be writable.
 * The handle written to `*out` must be released with [`qp_map_free`].
 */
QpStatus qp_map_from_config(const char *src, const char *format, QpMap **out);

/**
 * # Safety
 * `map` must be NULL or a handle from [`qp_map_from_config`] not yet freed.
 */
void qp_map_free(QpMap *map);

/**
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
QpStatus qp_map_omega(const QpMap *map, double *out);

/**
 * The fibre lift T̂_θ(x̂).
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
QpStatus qp_map_lift(const QpMap *map, double theta, double x, double *out);

/**
 * Orbit estimate of the fibrewise rotation number from (θ₀, x̂₀).
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
QpStatus qp_rotation_number(const QpMap *map,
                            double theta0,
                            double x0,
                            uint64_t n,
                            QpRotation *out);

/**
 * Smallest relation l + kω + qρ = 0 with q ≤ max_q, |k| ≤ max_k within `tol`.
 * `*found` is set to 0 when there is none, and `*out` is then left untouched.
 *
 * # Safety
 * `out` and `found` must be writable.
 */
QpStatus qp_relation_search(double omega,
                            double rho,
                            uint32_t max_q,
                            uint32_t max_k,
                            double tol,
                            QpRelation *out,
                            bool *found);

/**
 * Mean Lyapunov exponent over `seeds` random start vectors. Only maps built
 * from a projective cocycle have one.
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
QpStatus qp_lyapunov(const QpMap *map, uint64_t n, uint32_t seeds, uint64_t seed, double *out);

/**
 * Runs the full classification and writes the JSON report to `*out_json`.
 * Budgets and thresholds come from the config when present; `seed`
 * overrides the budget seed.
 *
 * # Safety
 * `map` must be a live handle and `out_json` writable. The string must be
 * released with [`qp_string_free`].
 */
QpStatus qp_classify(const QpMap *map, uint64_t seed, char **out_json);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void qp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPFORCE_H */
