#ifndef TRPS_LAB_H
#define TRPS_LAB_H

/* Generated by cbindgen from trps-lab-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum TrpsLabStatus {
  TRPS_LAB_STATUS_OK = 0,
  TRPS_LAB_STATUS_NULL_POINTER = 1,
  TRPS_LAB_STATUS_INVALID_INPUT = 2,
  TRPS_LAB_STATUS_UTF8_ERROR = 3,
  TRPS_LAB_STATUS_RUN_FAILED = 4,
  TRPS_LAB_STATUS_BUFFER_TOO_SMALL = 5,
} TrpsLabStatus;

/**
 * Opaque evolution engine: a Hermitian operator with its cached spectrum.
 */
typedef struct TrpsLabEngine TrpsLabEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread, or null.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *trps_lab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *trps_lab_version(void);

/**
 * Lapse of the spinor `(a0, a1)`.
 *
 * # Safety
 * `out` must point to a writable `double`.
 */
enum TrpsLabStatus trps_lab_lapse_of(double a0_re,
                                     double a0_im,
                                     double a1_re,
                                     double a1_im,
                                     double *out);

/**
 * Shift 3-vector of the spinor `(a0, a1)` at speed `c`.
 *
 * # Safety
 * `out` must point to a writable array of 3 doubles.
 */
enum TrpsLabStatus trps_lab_shift_of(double a0_re,
                                     double a0_im,
                                     double a1_re,
                                     double a1_im,
                                     double c,
                                     double *out);

/**
 * Magnetization modulus (and unit direction, when nonzero) of `count`
 * spins with the given weights. `spins` holds `3 * count` doubles.
 *
 * # Safety
 * `spins` and `weights` must be readable for `count` entries; `out_modulus`
 * and `out_direction` (3 doubles) must be writable.
 */
enum TrpsLabStatus trps_lab_magnetization(const double *spins,
                                          const double *weights,
                                          uintptr_t count,
                                          double *out_modulus,
                                          double *out_direction);

/**
 * Coherence lifetime `2 hbar^2 / (sigma dE^2)`; returns `INFINITY` when
 * `sigma` or `delta_e` is zero.
 */
double trps_lab_coherence_lifetime(double sigma, double delta_e, double hbar);

/**
 * Builds an engine from a row-major `dim x dim` complex matrix given as
 * interleaved `re, im` pairs (`2 * dim * dim` doubles). The matrix must be
 * Hermitian within the library tolerance.
 *
 * # Safety
 * `matrix_re_im` must be readable for `2 * dim * dim` doubles and
 * `out_engine` writable; the returned handle must be released with
 * [`trps_lab_engine_free`].
 */
enum TrpsLabStatus trps_lab_engine_new(const double *matrix_re_im,
                                       uintptr_t dim,
                                       struct TrpsLabEngine **out_engine);

/**
 * Releases an engine handle. Null is ignored.
 *
 * # Safety
 * `engine` must be a handle from [`trps_lab_engine_new`], not yet freed.
 */
void trps_lab_engine_free(struct TrpsLabEngine *engine);

/**
 * Dimension of the engine's operator; 0 for a null handle.
 *
 * # Safety
 * `engine` must be a live handle or null.
 */
uintptr_t trps_lab_engine_dim(const struct TrpsLabEngine *engine);

/**
 * Copies the ascending eigenvalues into `out` (`len >= dim` required).
 *
 * # Safety
 * `engine` must be a live handle; `out` writable for `len` doubles.
 */
enum TrpsLabStatus trps_lab_engine_eigenvalues(const struct TrpsLabEngine *engine,
                                               double *out,
                                               uintptr_t len);

/**
 * Applies the ensemble-averaged propagator for elapsed time `t` with
 * time-uncertainty `sigma` to the state `psi_re_im` (interleaved, length
 * `2 * dim`), writing the averaged state into `out_re_im`.
 *
 * # Safety
 * `engine` must be a live handle; `psi_re_im` readable and `out_re_im`
 * writable for `2 * dim` doubles.
 */
enum TrpsLabStatus trps_lab_engine_evolve_averaged(const struct TrpsLabEngine *engine,
                                                   const double *psi_re_im,
                                                   double t,
                                                   double sigma,
                                                   double hbar,
                                                   double *out_re_im);

/**
 * Decay factor of the averaged density element `(m, n)` after time `t`:
 * `exp(-sigma t (l_m - l_n)^2 / (2 hbar^2))`.
 *
 * # Safety
 * `engine` must be a live handle; `out` writable.
 */
enum TrpsLabStatus trps_lab_engine_offdiag_decay(const struct TrpsLabEngine *engine,
                                                 uintptr_t m,
                                                 uintptr_t n,
                                                 double t,
                                                 double sigma,
                                                 double hbar,
                                                 double *out);

/**
 * SHA-256 hash of the canonicalized configuration text, written as a
 * NUL-terminated hex string (buffer of at least 65 bytes).
 *
 * # Safety
 * `config_text` must be a NUL-terminated string; `buf` writable for
 * `buf_len` bytes.
 */
enum TrpsLabStatus trps_lab_config_hash(const char *config_text, char *buf, uintptr_t buf_len);

/**
 * Runs one scenario with the given configuration text, writing artifacts
 * under `out_dir`. `exit_code` receives the CLI-compatible code
 * (0 success, 1 usage error, 2 invariant violation).
 *
 * # Safety
 * `scenario`, `config_text`, and `out_dir` must be NUL-terminated strings;
 * `exit_code` must be writable.
 */
enum TrpsLabStatus trps_lab_run_scenario(const char *scenario,
                                         const char *config_text,
                                         const char *out_dir,
                                         int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRPS_LAB_H */
