#ifndef STABLEWORLD_H
#define STABLEWORLD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SW_ABI_VERSION 1

// Result code of every fallible call.
typedef enum SwStatus {
  SW_STATUS_OK = 0,
  SW_STATUS_NULL_POINTER = 1,
  SW_STATUS_INVALID_UTF8 = 2,
  SW_STATUS_UNKNOWN_PRESET = 3,
  SW_STATUS_INVALID_CONFIG = 4,
  SW_STATUS_DIMENSION_MISMATCH = 5,
  SW_STATUS_INVALID_IMAGE = 6,
  SW_STATUS_CLOSED_HANDLE = 7,
  SW_STATUS_JSON = 8,
  SW_STATUS_INTERNAL = 9,
} SwStatus;

// Opaque engine handle.
typedef struct SwEngine SwEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t sw_abi_version(void);

// Creates an engine from a preset name: `matrix_game`, `open_oasis` or
// `gamecraft`.
enum SwStatus sw_engine_create_preset(const char *name, struct SwEngine **out);

// Creates an engine from an eviction config JSON object. Missing fields
// take the `matrix_game` values.
enum SwStatus sw_engine_create_json(const char *config_json, struct SwEngine **out);

// Pushes one frame. `stride` is the row pitch in bytes, or 0 for `width`.
// On success `*decision_json` holds the eviction decision as JSON, or null
// while the window is still filling.
enum SwStatus sw_engine_push(struct SwEngine *engine,
                             const uint8_t *data,
                             size_t width,
                             size_t height,
                             size_t stride,
                             const char *payload_id,
                             char **decision_json);

// Full trace so far as JSON, in the CLI trace schema.
enum SwStatus sw_engine_trace_json(struct SwEngine *engine, char **out);

// Resolved config as JSON.
enum SwStatus sw_engine_config_json(struct SwEngine *engine, char **out);

// Number of frames currently in the window.
enum SwStatus sw_engine_window_len(struct SwEngine *engine, size_t *out);

// Releases the engine's window and caches. Later calls on the handle
// report `ClosedHandle`; the handle itself stays valid until
// [`sw_engine_free`].
enum SwStatus sw_engine_close(struct SwEngine *engine);

// Destroys a handle. Null is ignored.
void sw_engine_free(struct SwEngine *engine);

// Scores frame `b` against frame `a`. `metric_config_json` may be null for
// the default ORB metric, or a metric config JSON object such as
// `{"metric":"ssim"}`. Writes the score JSON to `*score_json`.
enum SwStatus sw_similarity(const uint8_t *a,
                            const uint8_t *b,
                            size_t width,
                            size_t height,
                            size_t stride,
                            const char *metric_config_json,
                            char **score_json);

// Frees a string returned by this library. Null is ignored.
void sw_string_free(char *s);

// Message for the last failed call on this thread, or null after a
// successful call. Valid until the next call on the same thread.
const char *sw_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STABLEWORLD_H */
