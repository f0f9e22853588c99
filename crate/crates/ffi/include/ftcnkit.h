#ifndef FTCNKIT_H
#define FTCNKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum FtcnStatus {
  FTCN_STATUS_OK = 0,
  FTCN_STATUS_INVALID_ARGUMENT = 1,
  FTCN_STATUS_SHAPE = 2,
  FTCN_STATUS_PARSE = 3,
  FTCN_STATUS_FORMAT = 4,
  FTCN_STATUS_IO = 5,
  FTCN_STATUS_JSON = 6,
  FTCN_STATUS_TAPE_CONSUMED = 7,
  FTCN_STATUS_NULL_POINTER = 8,
  FTCN_STATUS_UTF8 = 9,
  FTCN_STATUS_BUFFER_TOO_SMALL = 10,
  FTCN_STATUS_PANIC = 11,
} FtcnStatus;

/**
 * Architecture specification.
 */
typedef struct FtcnArch FtcnArch;

/**
 * Trained model with its architecture and head.
 */
typedef struct FtcnModel FtcnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful call. Release with [`ftcn_string_free`].
 */
char *ftcn_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 */
void ftcn_string_free(char *s);

/**
 * Library version, a static string.
 */
const char *ftcn_version(void);

/**
 * Parses the text form of an architecture.
 */
enum FtcnStatus ftcn_arch_parse(const char *text, struct FtcnArch **out);

/**
 * Builds a canonical architecture (`ftcn`, `r50`, `spatial`, `fhcn`,
 * `fwcn`, `sp`, `fk3`, `fk5`) with channel widths divided by
 * `width_div`. `input` points to C,T,H,W or is NULL for the full-size
 * input.
 */
enum FtcnStatus ftcn_arch_canonical(const char *name,
                                    size_t width_div,
                                    const size_t *input,
                                    struct FtcnArch **out);

/**
 * Rewrites an architecture by rule name (`ftcn`, `spatial`, `fhcn`,
 * `fwcn`, `fk3`, `fk5`) into a new handle.
 */
enum FtcnStatus ftcn_arch_transform(const struct FtcnArch *arch,
                                    const char *rule,
                                    struct FtcnArch **out);

/**
 * Text form of an architecture. Release with [`ftcn_string_free`].
 */
enum FtcnStatus ftcn_arch_render(const struct FtcnArch *arch, char **out);

/**
 * Backbone parameter count (convolutions and their batch norms).
 */
enum FtcnStatus ftcn_arch_count_params(const struct FtcnArch *arch, uint64_t *out);

/**
 * Output shape C,T,H,W of the backbone, written to `out[0..4]`.
 */
enum FtcnStatus ftcn_arch_output_shape(const struct FtcnArch *arch, size_t *out);

/**
 * Shapes after every top-level layer, four values per layer, written to
 * `out[0..4·layers]`. `layers` receives the layer count even when the
 * buffer of `capacity` elements is too small.
 */
enum FtcnStatus ftcn_arch_shapes(const struct FtcnArch *arch,
                                 size_t *out,
                                 size_t capacity,
                                 size_t *layers);

void ftcn_arch_free(struct FtcnArch *arch);

/**
 * Loads a checkpoint directory written by `ftcnkit train`.
 */
enum FtcnStatus ftcn_model_load(const char *dir, struct FtcnModel **out);

/**
 * Clip shape C,T,H,W the model expects, written to `out[0..4]`.
 */
enum FtcnStatus ftcn_model_input_shape(const struct FtcnModel *model, size_t *out);

/**
 * Fake probabilities of `n` clips stored contiguously as N×C×T×H×W
 * floats in [0,1]. Writes `n` values to `probs`.
 */
enum FtcnStatus ftcn_model_predict(const struct FtcnModel *model,
                                   const float *clips,
                                   size_t n,
                                   float *probs);

void ftcn_model_free(struct FtcnModel *model);

/**
 * Area under the ROC curve of `n` scores with labels 0 (real) or 1
 * (fake); ties count one half.
 */
enum FtcnStatus ftcn_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Learning rate at `epoch` of a linear warm-up from `lr_start` to
 * `lr_peak` over `warmup` epochs followed by cosine decay to zero at
 * `epochs`.
 */
enum FtcnStatus ftcn_lr_schedule(size_t epoch,
                                 size_t warmup,
                                 size_t epochs,
                                 double lr_start,
                                 double lr_peak,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FTCNKIT_H */
