/* C interface to the vot visual odometry library. */

#ifndef VOT_H
#define VOT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum VotStatus {
  VOT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  VOT_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument value was rejected; see vot_last_error.
   */
  VOT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The checkpoint file could not be read.
   */
  VOT_STATUS_IO = 3,
  /**
   * The checkpoint file exists but does not parse.
   */
  VOT_STATUS_BAD_CHECKPOINT = 4,
  /**
   * The model rejected the input frames.
   */
  VOT_STATUS_MODEL = 5,
  /**
   * A panic was caught at the FFI boundary.
   */
  VOT_STATUS_PANIC = 6,
} VotStatus;

/**
 * Loaded model plus the config it was trained with. Opaque to C.
 */
typedef struct VotModelHandle VotModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failing call on this thread. Never null;
 * valid until the next failing call on the same thread.
 */
const char *vot_last_error(void);

/**
 * Static library version string.
 */
const char *vot_version(void);

/**
 * Loads a checkpoint written by `vot train` and returns an owned handle
 * through `out`. The handle must be released with `vot_model_free`.
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string and `out` a valid pointer.
 */
enum VotStatus vot_model_load(const char *path, struct VotModelHandle **out);

/**
 * Releases a handle returned by `vot_model_load`. Null is a no-op.
 *
 * # Safety
 * `handle` must be null or a pointer obtained from `vot_model_load` that
 * has not been freed already.
 */
void vot_model_free(struct VotModelHandle *handle);

/**
 * Expected frame height in pixels; 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be null or a live pointer from `vot_model_load`.
 */
size_t vot_model_frame_height(const struct VotModelHandle *handle);

/**
 * Expected frame width in pixels; 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be null or a live pointer from `vot_model_load`.
 */
size_t vot_model_frame_width(const struct VotModelHandle *handle);

/**
 * Expected channels per pixel (1 or 3); 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be null or a live pointer from `vot_model_load`.
 */
size_t vot_model_frame_channels(const struct VotModelHandle *handle);

/**
 * Frames per attention window; longer inputs are processed in overlapping
 * windows of this size. 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be null or a live pointer from `vot_model_load`.
 */
size_t vot_model_window(const struct VotModelHandle *handle);

/**
 * Predicts the relative pose of each consecutive frame pair.
 *
 * `frames` holds `n_frames` images back to back, each
 * `height * width * channels` doubles in [0,1], row-major with channels
 * innermost. `out_poses` receives `(n_frames - 1) * 7` doubles.
 *
 * # Safety
 * `frames` and `out_poses` must point to buffers of the sizes above.
 */
enum VotStatus vot_predict_relative(const struct VotModelHandle *handle,
                                    const double *frames,
                                    size_t n_frames,
                                    double *out_poses);

/**
 * Predicts the absolute trajectory from an identity start by composing the
 * relative poses. `out_poses` receives `n_frames * 7` doubles; the first
 * pose is always the identity.
 *
 * # Safety
 * `frames` and `out_poses` must point to buffers of the sizes above.
 */
enum VotStatus vot_predict_absolute(const struct VotModelHandle *handle,
                                    const double *frames,
                                    size_t n_frames,
                                    double *out_poses);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOT_H */
