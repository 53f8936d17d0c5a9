#ifndef LINECORR_H
#define LINECORR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_ARGUMENT = 2,
  LC_STATUS_DIMENSION_MISMATCH = 3,
  LC_STATUS_FORMAT = 4,
  LC_STATUS_DEGENERATE = 5,
  LC_STATUS_NON_FINITE = 6,
  LC_STATUS_IO = 7,
  LC_STATUS_PANIC = 8,
} LcStatus;

// Direction in which a region pair was found.
typedef enum LcDirection {
  LC_DIRECTION_A_TO_B = 0,
  LC_DIRECTION_B_TO_A = 1,
  LC_DIRECTION_BOTH = 2,
} LcDirection;

// Configuration and weights.
typedef struct LcModel LcModel;

// Similarity matrix, region maps and correspondences of one pair.
typedef struct LcPrediction LcPrediction;

// One region correspondence.
typedef struct LcPair {
  uint32_t a;
  uint32_t b;
  double score;
  enum LcDirection direction;
} LcPair;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *lc_last_error(void);

// Library version as a static NUL-terminated string.
const char *lc_version(void);

// Loads weights from `checkpoint`. `config_json` may be null for defaults.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum LcStatus lc_model_load(const char *checkpoint, const char *config_json, struct LcModel **out);

// Creates a model with freshly initialized weights.
//
// # Safety
// `config_json` must be null or NUL-terminated; `out` must be writable.
enum LcStatus lc_model_init(const char *config_json, uint64_t seed, struct LcModel **out);

// Side length in pixels of the square images the model accepts.
//
// # Safety
// `model` must come from this library; `out` must be writable.
enum LcStatus lc_model_image_side(const struct LcModel *model, size_t *out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or come from this library and not be used again.
void lc_model_free(struct LcModel *model);

// Runs the full pipeline on two 8-bit grayscale line art images of
// `width * height` bytes each, row-major.
//
// # Safety
// Buffers must hold `width * height` bytes; `out` must be writable.
enum LcStatus lc_predict(const struct LcModel *model,
                         const uint8_t *img_a,
                         const uint8_t *img_b,
                         size_t width,
                         size_t height,
                         struct LcPrediction **out);

// Row-major `2N x 2N` similarity entries. The pointer lives as long as
// the prediction.
//
// # Safety
// `pred` must come from this library; output pointers must be writable.
enum LcStatus lc_prediction_similarity(const struct LcPrediction *pred,
                                       const float **data,
                                       size_t *n);

// Region label raster of image a (`side` 0) or b (`side` 1); 0 is
// background. The pointer lives as long as the prediction.
//
// # Safety
// `pred` must come from this library; output pointers must be writable.
enum LcStatus lc_prediction_labels(const struct LcPrediction *pred,
                                   uint32_t side,
                                   const uint32_t **data,
                                   size_t *width,
                                   size_t *height);

// Number of region pairs.
//
// # Safety
// `pred` must come from this library; `out` must be writable.
enum LcStatus lc_prediction_num_pairs(const struct LcPrediction *pred, size_t *out);

// Pair number `index`.
//
// # Safety
// `pred` must come from this library; `out` must be writable.
enum LcStatus lc_prediction_pair(const struct LcPrediction *pred, size_t index, struct LcPair *out);

// Correspondences as JSON. The string lives as long as the prediction.
//
// # Safety
// `pred` must come from this library; `out` must be writable.
enum LcStatus lc_prediction_corr_json(const struct LcPrediction *pred, const char **out);

// Releases a prediction. Null is ignored.
//
// # Safety
// `pred` must be null or come from this library and not be used again.
void lc_prediction_free(struct LcPrediction *pred);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINECORR_H */
