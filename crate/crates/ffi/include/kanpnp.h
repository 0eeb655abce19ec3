#ifndef KANPNP_H
#define KANPNP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define KANPNP_BASIS_BSPLINE 0

#define KANPNP_BASIS_FOURIER 1

typedef enum KanpnpStatus {
  KANPNP_STATUS_OK = 0,
  KANPNP_STATUS_NULL_POINTER = 1,
  KANPNP_STATUS_INVALID_ARGUMENT = 2,
  KANPNP_STATUS_CONFIG = 3,
  KANPNP_STATUS_SHAPE = 4,
  KANPNP_STATUS_NUMERICAL = 5,
  KANPNP_STATUS_IO = 6,
  KANPNP_STATUS_FORMAT = 7,
  KANPNP_STATUS_PANIC = 8,
} KanpnpStatus;

// An image of `f64` samples in row-major, channel-interleaved order.
typedef struct KanpnpImage KanpnpImage;

// A Kolmogorov-Arnold network mapping coordinates to pixel values.
typedef struct KanpnpNetwork KanpnpNetwork;

// The result of one reconstruction experiment.
typedef struct KanpnpReport KanpnpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *kanpnp_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *kanpnp_last_error(void);

// Creates an image from `height * width * channels` samples.
//
// # Safety
// `data` must point to that many readable doubles and `out` must be writable.
enum KanpnpStatus kanpnp_image_new(size_t height,
                                   size_t width,
                                   size_t channels,
                                   const double *data,
                                   struct KanpnpImage **out);

// Reads an 8-bit PNG into `[0, 1]` samples.
//
// # Safety
// `path` must be a NUL-terminated string and `out` must be writable.
enum KanpnpStatus kanpnp_image_load(const char *path, struct KanpnpImage **out);

// Writes an image as an 8-bit PNG, clamping samples to `[0, 1]`.
//
// # Safety
// `image` must come from this library and `path` must be NUL-terminated.
enum KanpnpStatus kanpnp_image_save(const struct KanpnpImage *image, const char *path);

// # Safety
// `image` must come from this library; the out pointers must be writable.
enum KanpnpStatus kanpnp_image_dims(const struct KanpnpImage *image,
                                    size_t *height,
                                    size_t *width,
                                    size_t *channels);

// Copies the samples into `buffer`, which must hold exactly
// `height * width * channels` doubles.
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum KanpnpStatus kanpnp_image_copy_data(const struct KanpnpImage *image,
                                         double *buffer,
                                         size_t len);

// # Safety
// `image` must come from this library and not be used afterwards. NULL is
// ignored.
void kanpnp_image_free(struct KanpnpImage *image);

// Peak signal-to-noise ratio in dB of `test` against `reference`.
//
// # Safety
// Both images must come from this library and `out` must be writable.
enum KanpnpStatus kanpnp_psnr(const struct KanpnpImage *reference,
                              const struct KanpnpImage *test,
                              double peak,
                              double *out);

// Mean structural similarity of `test` against `reference`.
//
// # Safety
// Both images must come from this library and `out` must be writable.
enum KanpnpStatus kanpnp_ssim(const struct KanpnpImage *reference,
                              const struct KanpnpImage *test,
                              double *out);

// Initializes a network with layer widths `dims[0..n_dims]`. `basis` is one
// of the `KANPNP_BASIS_*` constants; `order` is the spline degree or the
// Fourier harmonic count.
//
// # Safety
// `dims` must point to `n_dims` readable values and `out` must be writable.
enum KanpnpStatus kanpnp_network_new(const size_t *dims,
                                     size_t n_dims,
                                     uint32_t basis,
                                     size_t grid_size,
                                     size_t order,
                                     uint64_t seed,
                                     struct KanpnpNetwork **out);

// Reads a network saved by [`kanpnp_network_save`] or the command line tool.
//
// # Safety
// `path` must be NUL-terminated and `out` must be writable.
enum KanpnpStatus kanpnp_network_load(const char *path, struct KanpnpNetwork **out);

// # Safety
// `network` must come from this library and `path` must be NUL-terminated.
enum KanpnpStatus kanpnp_network_save(const struct KanpnpNetwork *network, const char *path);

// Input and output widths of the network.
//
// # Safety
// `network` must come from this library; the out pointers must be writable.
enum KanpnpStatus kanpnp_network_io_dims(const struct KanpnpNetwork *network,
                                         size_t *in_dim,
                                         size_t *out_dim);

// Evaluates `n_points` row-major inputs of width `in_dim` into `output`,
// which must hold `n_points * out_dim` doubles.
//
// # Safety
// `inputs` and `output` must be valid for the sizes above.
enum KanpnpStatus kanpnp_network_eval(const struct KanpnpNetwork *network,
                                      const double *inputs,
                                      size_t n_points,
                                      double *output,
                                      size_t output_len);

// Certified upper bound and sampled estimate of the Lipschitz constant.
//
// # Safety
// `network` must come from this library; the out pointers must be writable.
enum KanpnpStatus kanpnp_network_lipschitz(const struct KanpnpNetwork *network,
                                           size_t pairs,
                                           uint64_t seed,
                                           double *bound,
                                           double *empirical);

// # Safety
// `network` must come from this library and not be used afterwards. NULL is
// ignored.
void kanpnp_network_free(struct KanpnpNetwork *network);

// Runs a full experiment described by a TOML document and writes its
// outputs to the configured directory.
//
// # Safety
// `config_toml` must be NUL-terminated and `out` must be writable.
enum KanpnpStatus kanpnp_experiment_run(const char *config_toml, struct KanpnpReport **out);

// PSNR and SSIM of the reconstruction; NaN when no ground truth was given.
//
// # Safety
// `report` must come from this library; the out pointers must be writable.
enum KanpnpStatus kanpnp_report_metrics(const struct KanpnpReport *report,
                                        double *psnr_db,
                                        double *ssim_value);

// Copies up to `len` per-iteration `||x - z||` values into `buffer` and
// stores the total count in `count`. Pass `len = 0` to query the count.
//
// # Safety
// `buffer` must point to `len` writable doubles and `count` must be writable.
enum KanpnpStatus kanpnp_report_residuals(const struct KanpnpReport *report,
                                          double *buffer,
                                          size_t len,
                                          size_t *count);

// The full report as JSON. The string is owned by the report.
//
// # Safety
// `report` must come from this library.
const char *kanpnp_report_json(const struct KanpnpReport *report);

// # Safety
// `report` must come from this library and not be used afterwards. NULL is
// ignored.
void kanpnp_report_free(struct KanpnpReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KANPNP_H */
