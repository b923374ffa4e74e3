#ifndef SCKD_H
#define SCKD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Encoder families accepted by `sckd_network_new`.
#define SCKD_ENCODER_C3D 0

#define SCKD_ENCODER_I3D 1

#define SCKD_ENCODER_R2PLUS1D 2

// Result code of every call.
typedef enum SckdStatus {
  SCKD_STATUS_OK = 0,
  SCKD_STATUS_NULL_POINTER = 1,
  SCKD_STATUS_INVALID_ARGUMENT = 2,
  SCKD_STATUS_SHAPE = 3,
  SCKD_STATUS_IO = 4,
  SCKD_STATUS_FORMAT = 5,
  SCKD_STATUS_MISSING_ARTIFACT = 6,
  SCKD_STATUS_CONFIG = 7,
  SCKD_STATUS_RUNTIME = 8,
  SCKD_STATUS_PANIC = 9,
} SckdStatus;

// Opaque network handle.
typedef struct SckdNetwork SckdNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *sckd_last_error(void);

// Library version as a static NUL-terminated string.
const char *sckd_version(void);

// Builds a freshly initialized network. `student` selects the compact
// student (the encoder kind is then ignored); `width` scales encoder channels.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SckdStatus sckd_network_new(uint32_t encoder,
                                 bool student,
                                 size_t window,
                                 double width,
                                 uint64_t seed,
                                 struct SckdNetwork **out);

// Loads a checkpoint written by the `sckd` tools.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SckdStatus sckd_network_load(const char *path, struct SckdNetwork **out);

// Writes the network as a checkpoint.
//
// # Safety
// `net` must come from this library; `path` must be a NUL-terminated string.
enum SckdStatus sckd_network_save(const struct SckdNetwork *net, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `net` must come from this library and must not be used afterwards.
void sckd_network_free(struct SckdNetwork *net);

// Window length (time steps) the network expects.
//
// # Safety
// `net` must come from this library; `out` must be writable.
enum SckdStatus sckd_network_window(const struct SckdNetwork *net, size_t *out);

// Number of trainable scalars.
//
// # Safety
// `net` must come from this library; `out` must be writable.
enum SckdStatus sckd_network_parameter_count(const struct SckdNetwork *net, size_t *out);

// Predicts forces for `batch` clips. `input` holds `batch * 2 * window * 16 * 8`
// floats (row-major `[b, foot, t, row, col]`); `output` receives
// `batch * 2 * window` floats and `output_len` must equal that count.
//
// # Safety
// Pointers must reference buffers of the stated lengths.
enum SckdStatus sckd_network_predict(const struct SckdNetwork *net,
                                     const float *input,
                                     size_t batch,
                                     float *output,
                                     size_t output_len);

// Mean batch-1 latency over `samples` forward passes, in milliseconds
// (0 when `samples` is 0).
//
// # Safety
// `net` must come from this library; `avg_ms` must be writable.
enum SckdStatus sckd_network_latency(const struct SckdNetwork *net, size_t samples, double *avg_ms);

// RBF correlation map of a `[b, t]` row-major feature (rows are normalized to
// unit length first). `taylor_order` 0 selects the exact kernel. `out`
// receives `b * b` values.
//
// # Safety
// `feature` must hold `b * t` doubles and `out` `b * b` doubles.
enum SckdStatus sckd_correlation_map(const double *feature,
                                     size_t b,
                                     size_t t,
                                     double gamma,
                                     size_t taylor_order,
                                     double *out);

// RMSE and MAE (x100) and Pearson r (x100) over `n` paired values.
//
// # Safety
// `pred` and `truth` must hold `n` doubles; `out` must hold 3.
enum SckdStatus sckd_point_metrics(const double *pred, const double *truth, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCKD_H */
