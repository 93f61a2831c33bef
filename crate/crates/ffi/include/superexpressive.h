#ifndef SUPEREXPRESSIVE_H
#define SUPEREXPRESSIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SeActivation {
  SE_ACTIVATION_EUAF = 0,
  SE_ACTIVATION_PEUAF = 1,
  SE_ACTIVATION_RHO1 = 2,
  SE_ACTIVATION_RHO2 = 3,
  SE_ACTIVATION_RHO3 = 4,
} SeActivation;

// Result code of every fallible call.
typedef enum SeStatus {
  SE_STATUS_OK = 0,
  SE_STATUS_NULL_POINTER = 1,
  SE_STATUS_INVALID_ARGUMENT = 2,
  SE_STATUS_DOMAIN = 3,
  SE_STATUS_DIMENSION_MISMATCH = 4,
  SE_STATUS_SEARCH_FAILURE = 5,
  SE_STATUS_DECOMPOSITION_FAILURE = 6,
  SE_STATUS_PARSE = 7,
  SE_STATUS_IO = 8,
  SE_STATUS_BUFFER_TOO_SMALL = 9,
  SE_STATUS_PANIC = 10,
} SeStatus;

// Opaque trained classifier.
typedef struct SeModel SeModel;

// Opaque constructed network.
typedef struct SeNetwork SeNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *se_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL, or 0
// when there is no error.
//
// # Safety
// `buf` must point to `len` writable bytes or be null.
size_t se_last_error_message(char *buf, size_t len);

// Evaluates an activation; `w` is used by PEUAF only.
//
// # Safety
// `out` must be a valid pointer to one `double`.
enum SeStatus se_activation_eval(enum SeActivation kind, double w, double x, double *out);

// Derivatives of an activation in `x` and, for PEUAF, in `w`.
//
// # Safety
// `dx` and `dw` must each be valid pointers to one `double`.
enum SeStatus se_activation_derivs(enum SeActivation kind,
                                   double w,
                                   double x,
                                   double *dx,
                                   double *dw);

// Builds a fixed-size network for a registry target (or CSV table path) on
// `[0, 1]^dim` within `eps`. On success `*out` receives a new handle.
//
// # Safety
// `target` must be a NUL-terminated string; `out` a valid pointer.
enum SeStatus se_network_approximate(enum SeActivation kind,
                                     const char *target,
                                     size_t dim,
                                     double eps,
                                     uint64_t seed,
                                     struct SeNetwork **out);

// Loads a network file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum SeStatus se_network_load(const char *path, struct SeNetwork **out);

// Saves a network; `hex_floats` selects hexadecimal float literals.
//
// # Safety
// `net` must be a live handle; `path` a NUL-terminated string.
enum SeStatus se_network_save(const struct SeNetwork *net, const char *path, bool hex_floats);

// Evaluates a scalar-output network at `x[0..n]`.
//
// # Safety
// `net` must be a live handle, `x` must hold `n` doubles and `out` one.
enum SeStatus se_network_eval(const struct SeNetwork *net, const double *x, size_t n, double *out);

// Width, depth and neuron count of a network.
//
// # Safety
// `net` must be a live handle; the outputs valid pointers.
enum SeStatus se_network_architecture(const struct SeNetwork *net,
                                      size_t *width,
                                      size_t *depth,
                                      size_t *neurons);

// Input dimension of a network, 0 for a null handle.
//
// # Safety
// `net` must be a live handle or null.
size_t se_network_input_dim(const struct SeNetwork *net);

// # Safety
// `net` must come from this library and not be used afterwards; null is ignored.
void se_network_free(struct SeNetwork *net);

// Loads a model JSON written by `superexp train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum SeStatus se_model_load(const char *path, struct SeModel **out);

// Signal length expected by the model, 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t se_model_input_len(const struct SeModel *model);

// Number of classes, 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t se_model_classes(const struct SeModel *model);

// Class probabilities of one signal, written to `probs[0..classes]`.
//
// # Safety
// `signal` must hold `len` doubles and `probs` `classes` doubles.
enum SeStatus se_model_predict(const struct SeModel *model,
                               const double *signal,
                               size_t len,
                               double *probs,
                               size_t classes);

// Occlusion drops of one signal. `*written` receives the window count; when
// `capacity` is too small nothing is copied and `BufferTooSmall` is returned.
//
// # Safety
// `signal` must hold `len` doubles, `drops` `capacity` doubles, `written` one `size_t`.
enum SeStatus se_model_occlusion(const struct SeModel *model,
                                 const double *signal,
                                 size_t len,
                                 size_t label,
                                 size_t window,
                                 size_t stride,
                                 double *drops,
                                 size_t capacity,
                                 size_t *written);

// # Safety
// `model` must come from this library and not be used afterwards; null is ignored.
void se_model_free(struct SeModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPEREXPRESSIVE_H */
