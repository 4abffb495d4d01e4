#ifndef LRNQS_H
#define LRNQS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function of the C interface.
 */
typedef enum LrnqsStatus {
  LRNQS_STATUS_OK = 0,
  LRNQS_STATUS_NULL_POINTER = 1,
  LRNQS_STATUS_INVALID_ARGUMENT = 2,
  LRNQS_STATUS_DIMENSION_MISMATCH = 3,
  LRNQS_STATUS_NON_FINITE = 4,
  LRNQS_STATUS_NUMERICAL = 5,
  LRNQS_STATUS_INSUFFICIENT_DATA = 6,
  LRNQS_STATUS_IO = 7,
  LRNQS_STATUS_PANIC = 8,
} LrnqsStatus;

/**
 * Opaque handle holding an ansatz together with its parameter vector.
 */
typedef struct LrnqsAnsatz LrnqsAnsatz;

/**
 * Opaque Hamiltonian handle.
 */
typedef struct LrnqsModel LrnqsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *lrnqs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lrnqs_version(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer returned by this library and not yet freed.
 */
void lrnqs_string_free(char *s);

/**
 * Build the long-range transverse-field Ising Hamiltonian on a ring.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LrnqsStatus lrnqs_model_new(size_t size,
                                 double alpha,
                                 double coupling,
                                 double self_term,
                                 double field,
                                 bool kac_on,
                                 struct LrnqsModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`lrnqs_model_new`] not yet freed.
 */
void lrnqs_model_free(struct LrnqsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LrnqsStatus lrnqs_model_kac_factor(const struct LrnqsModel *model, double *out);

/**
 * Diagonal (`σᶻσᶻ`) energy of one configuration.
 *
 * # Safety
 * `model` must be a live handle, `spins` must point to `len` values and
 * `out` must be writable.
 */
enum LrnqsStatus lrnqs_model_diagonal_energy(const struct LrnqsModel *model,
                                             const int8_t *spins,
                                             size_t len,
                                             double *out);

/**
 * Exact ground-state energy and gap for small chains.
 *
 * # Safety
 * `model` must be a live handle; `energy` and `gap` must be writable.
 */
enum LrnqsStatus lrnqs_exact_ground_state(const struct LrnqsModel *model,
                                          double *energy,
                                          double *gap);

/**
 * Local energy `⟨s|H|ψ⟩/⟨s|ψ⟩` of the ansatz at one configuration.
 *
 * # Safety
 * Both handles must be live, `spins` must point to `len` values and `out`
 * must be writable.
 */
enum LrnqsStatus lrnqs_local_energy(const struct LrnqsModel *model,
                                    const struct LrnqsAnsatz *ansatz,
                                    const int8_t *spins,
                                    size_t len,
                                    double *out);

/**
 * Build an ansatz from a JSON description, for example
 * `{"type": "rbm", "size": 10, "density": 1}`, with freshly initialised
 * parameters.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` writable.
 */
enum LrnqsStatus lrnqs_ansatz_new(const char *spec_json, uint64_t seed, struct LrnqsAnsatz **out);

/**
 * Load an ansatz and its parameters from a checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` writable.
 */
enum LrnqsStatus lrnqs_ansatz_load(const char *dir, struct LrnqsAnsatz **out);

/**
 * # Safety
 * `ansatz` must be null or a live handle.
 */
void lrnqs_ansatz_free(struct LrnqsAnsatz *ansatz);

/**
 * Number of real parameters (0 for a null handle).
 *
 * # Safety
 * `ansatz` must be null or a live handle.
 */
size_t lrnqs_ansatz_parameter_count(const struct LrnqsAnsatz *ansatz);

/**
 * Copy the parameters into `values`, which must hold exactly
 * [`lrnqs_ansatz_parameter_count`] entries.
 *
 * # Safety
 * `ansatz` must be live and `values` must point to `len` writable doubles.
 */
enum LrnqsStatus lrnqs_ansatz_get_parameters(const struct LrnqsAnsatz *ansatz,
                                             double *values,
                                             size_t len);

/**
 * Replace the parameters; `len` must equal the parameter count.
 *
 * # Safety
 * `ansatz` must be live and `values` must point to `len` readable doubles.
 */
enum LrnqsStatus lrnqs_ansatz_set_parameters(struct LrnqsAnsatz *ansatz,
                                             const double *values,
                                             size_t len);

/**
 * `log ψ(s)` at the current parameters.
 *
 * # Safety
 * `ansatz` must be live, `spins` must point to `len` values and `out` must
 * be writable.
 */
enum LrnqsStatus lrnqs_ansatz_log_psi(const struct LrnqsAnsatz *ansatz,
                                      const int8_t *spins,
                                      size_t len,
                                      double *out);

/**
 * `log ψ(s)` and its derivatives with respect to every parameter.
 *
 * # Safety
 * `ansatz` must be live, `spins` must point to `len` values, `gradient` to
 * `gradient_len` writable doubles and `log_psi` must be writable.
 */
enum LrnqsStatus lrnqs_ansatz_log_psi_gradient(const struct LrnqsAnsatz *ansatz,
                                               const int8_t *spins,
                                               size_t len,
                                               double *gradient,
                                               size_t gradient_len,
                                               double *log_psi);

/**
 * Train from a JSON run configuration into `run_dir`. On success
 * `summary_json` receives the run summary, to be released with
 * [`lrnqs_string_free`].
 *
 * # Safety
 * `config_json` and `run_dir` must be NUL-terminated strings and
 * `summary_json` writable.
 */
enum LrnqsStatus lrnqs_train(const char *config_json, const char *run_dir, char **summary_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LRNQS_H */
