#ifndef MODIFF_H
#define MODIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum ModiffStatus {
  MODIFF_STATUS_OK = 0,
  MODIFF_STATUS_NULL_ARGUMENT = 1,
  MODIFF_STATUS_INVALID_UTF8 = 2,
  MODIFF_STATUS_DIMENSION = 3,
  MODIFF_STATUS_INSUFFICIENT_FRAMES = 4,
  MODIFF_STATUS_PARAMETER = 5,
  MODIFF_STATUS_NUMERICAL = 6,
  MODIFF_STATUS_UNDEFINED_METRIC = 7,
  MODIFF_STATUS_FORMAT = 8,
  MODIFF_STATUS_IO = 9,
  MODIFF_STATUS_BUFFER_TOO_SMALL = 10,
  MODIFF_STATUS_PANIC = 11,
} ModiffStatus;

/**
 * Mask kinds for [`modiff_edit`].
 */
typedef enum ModiffMaskKind {
  /**
   * Keep the first `values[0]` frames.
   */
  MODIFF_MASK_KIND_PREFIX = 0,
  /**
   * Keep the frames listed in `values`.
   */
  MODIFF_MASK_KIND_KEYFRAMES = 1,
} ModiffMaskKind;

/**
 * A loaded checkpoint: model weights, noise schedule and metadata.
 */
typedef struct ModiffCheckpoint ModiffCheckpoint;

/**
 * A motion with its frame rate and, when known, its skeleton.
 */
typedef struct ModiffMotion ModiffMotion;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *modiff_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *modiff_version(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ModiffStatus modiff_checkpoint_load(const char *path, struct ModiffCheckpoint **out);

/**
 * # Safety
 * `ck` must come from [`modiff_checkpoint_load`] or be NULL.
 */
void modiff_checkpoint_free(struct ModiffCheckpoint *ck);

/**
 * Motion channels (3 per joint) the model produces; 0 for NULL.
 *
 * # Safety
 * `ck` must be a live checkpoint handle or NULL.
 */
size_t modiff_checkpoint_channels(const struct ModiffCheckpoint *ck);

/**
 * Motion frame rate the checkpoint was trained at; 0 for NULL.
 *
 * # Safety
 * `ck` must be a live checkpoint handle or NULL.
 */
double modiff_checkpoint_fps(const struct ModiffCheckpoint *ck);

/**
 * Samples a `frames`-long motion. Conditioning is the WAV file at
 * `audio_path`, the caption `text`, or nothing when both are NULL.
 *
 * # Safety
 * `ck` must be a live handle; strings NUL-terminated or NULL; `out` valid.
 */
enum ModiffStatus modiff_sample(const struct ModiffCheckpoint *ck,
                                const char *audio_path,
                                const char *text,
                                size_t frames,
                                uint64_t seed,
                                struct ModiffMotion **out);

/**
 * Completes a `canvas`-frame motion around the kept frames of `seed_motion`.
 *
 * # Safety
 * Handles must be live; `values` must point to `count` entries;
 * strings NUL-terminated or NULL; `out` valid.
 */
enum ModiffStatus modiff_edit(const struct ModiffCheckpoint *ck,
                              const struct ModiffMotion *seed_motion,
                              enum ModiffMaskKind kind,
                              const size_t *values,
                              size_t count,
                              size_t canvas,
                              const char *audio_path,
                              const char *text,
                              uint64_t seed,
                              struct ModiffMotion **out);

/**
 * Copies `frames * channels` row-major doubles into a new motion.
 *
 * # Safety
 * `data` must point to `frames * channels` doubles; `out` valid.
 */
enum ModiffStatus modiff_motion_new(const double *data,
                                    size_t frames,
                                    size_t channels,
                                    double fps,
                                    struct ModiffMotion **out);

/**
 * Reads a motion JSON file together with its skeleton.
 *
 * # Safety
 * `path` NUL-terminated; `out` valid.
 */
enum ModiffStatus modiff_motion_read(const char *path, struct ModiffMotion **out);

/**
 * Writes a motion JSON file. Motions built from raw data need a known
 * skeleton; one with the matching channel count is looked up by preset.
 *
 * # Safety
 * `motion` must be live; `path` NUL-terminated.
 */
enum ModiffStatus modiff_motion_write(const struct ModiffMotion *motion, const char *path);

/**
 * # Safety
 * `motion` must come from this library or be NULL.
 */
void modiff_motion_free(struct ModiffMotion *motion);

/**
 * # Safety
 * `motion` must be live or NULL.
 */
size_t modiff_motion_frames(const struct ModiffMotion *motion);

/**
 * # Safety
 * `motion` must be live or NULL.
 */
size_t modiff_motion_channels(const struct ModiffMotion *motion);

/**
 * # Safety
 * `motion` must be live or NULL.
 */
double modiff_motion_fps(const struct ModiffMotion *motion);

/**
 * Copies the row-major frames into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `motion` must be live; `buf` must hold `len` doubles.
 */
enum ModiffStatus modiff_motion_copy(const struct ModiffMotion *motion, double *buf, size_t len);

/**
 * Beat alignment score of kinematic beat frames against music beat
 * frames, with Gaussian width `sigma` in frames.
 *
 * # Safety
 * `music` and `kinematic` must point to the given counts of frame indices.
 */
enum ModiffStatus modiff_beat_alignment(const size_t *music,
                                        size_t music_count,
                                        const size_t *kinematic,
                                        size_t kinematic_count,
                                        double sigma,
                                        double *out);

/**
 * Beat alignment of a motion against the onsets of a WAV file, using the
 * checkpoint's Mel settings when `ck` is given and the defaults otherwise.
 *
 * # Safety
 * `motion` live; `ck` live or NULL; `audio_path` NUL-terminated; `out` valid.
 */
enum ModiffStatus modiff_motion_bas(const struct ModiffMotion *motion,
                                    const struct ModiffCheckpoint *ck,
                                    const char *audio_path,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODIFF_H */
