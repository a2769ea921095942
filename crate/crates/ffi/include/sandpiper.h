#ifndef SANDPIPER_H
#define SANDPIPER_H

/* Generated by cbindgen from the sandpiper-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or malformed JSON argument.
   */
  SP_STATUS_INVALID_ARGUMENT = 1,
  SP_STATUS_NOT_FOUND = 2,
  /**
   * The request was understood but is not valid for the current state.
   */
  SP_STATUS_INVALID = 3,
  SP_STATUS_CONFLICT = 4,
  SP_STATUS_FORBIDDEN = 5,
  SP_STATUS_SCHEMA_VIOLATION = 6,
  SP_STATUS_GATEWAY = 7,
  SP_STATUS_STORAGE = 8,
  /**
   * A panic was caught at the boundary.
   */
  SP_STATUS_INTERNAL = 9,
} SpStatus;

/**
 * Opaque workbench handle.
 */
typedef struct SpWorkbench SpWorkbench;

/**
 * Agreement between two label sequences.
 */
typedef struct SpKappa {
  double kappa;
  double observed_agreement;
  double expected_agreement;
  size_t n_items;
} SpKappa;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, statically allocated.
 */
const char *sp_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *sp_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void sp_string_free(char *s);

/**
 * Opens a workbench. `config_toml` may be null for defaults; `store_path`
 * overrides the configured store and may be null. Pass `":memory:"` for a
 * store that keeps nothing.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum SpStatus sp_workbench_open(const char *config_toml,
                                const char *store_path,
                                struct SpWorkbench **out);

/**
 * # Safety
 * `wb` must be null or a handle from [`sp_workbench_open`], not yet freed,
 * with no call in flight on another thread.
 */
void sp_workbench_free(struct SpWorkbench *wb);

/**
 * Imports `len` bytes in `format` (`plaintext`, `csv`, `session-json`).
 * Writes `{session, report}`.
 *
 * # Safety
 * `data` must point at `len` readable bytes; other pointers as usual.
 */
enum SpStatus sp_import(const struct SpWorkbench *wb,
                        const uint8_t *data,
                        size_t len,
                        const char *format,
                        const char *title,
                        char **out_json);

/**
 * Masks a raw session. `roster_json` is a JSON array of names, or null.
 * Writes `{session, report}`.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_deidentify(const struct SpWorkbench *wb,
                            const char *session_id,
                            const char *roster_json,
                            char **out_json);

/**
 * Applies `{"decision": "approve"|"reject", "notes": ...}`. Writes the session.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_deid_review(const struct SpWorkbench *wb,
                             const char *session_id,
                             const char *decision_json,
                             char **out_json);

/**
 * Creates a prompt with one version. Writes the prompt.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_create_prompt(const struct SpWorkbench *wb,
                               const char *name,
                               const char *instructions,
                               const char *schema_json,
                               char **out_json);

/**
 * Creates a queued run from a run request document. Writes the run.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_create_run(const struct SpWorkbench *wb,
                            const char *request_json,
                            char **out_json);

/**
 * Executes a queued run on the calling thread. Writes the final run.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_execute_run(const struct SpWorkbench *wb, const char *run_id, char **out_json);

/**
 * Requests cancellation; safe to call while another thread executes the run.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_cancel_run(const struct SpWorkbench *wb, const char *run_id, char **out_json);

/**
 * Records a human label. Writes the annotation.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_add_label(const struct SpWorkbench *wb, const char *label_json, char **out_json);

/**
 * `members_json` is an array of `"run:<id>"` / `"human:<coder>"` strings;
 * `reference` may be null. Writes the run-set.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_create_runset(const struct SpWorkbench *wb,
                               const char *name,
                               const char *members_json,
                               const char *reference,
                               const char *target_field,
                               char **out_json);

/**
 * Writes the evaluation report of a run-set.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_evaluate(const struct SpWorkbench *wb, const char *runset_id, char **out_json);

/**
 * Fetches one document from a non-protected collection.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_get(const struct SpWorkbench *wb,
                     const char *collection,
                     const char *id,
                     char **out_json);

/**
 * Cohen's kappa over two equally long JSON arrays of string labels.
 * Fails with `Invalid` when the arrays are empty.
 *
 * # Safety
 * See the crate docs; `out` must be writable.
 */
enum SpStatus sp_cohen_kappa(const char *labels_a_json,
                             const char *labels_b_json,
                             struct SpKappa *out);

/**
 * Validates `document` against `schema_json`. Returns `Ok` when it
 * conforms and `SchemaViolation` otherwise; in both cases the error list
 * (possibly empty) is written to `errors_json` when it is non-null.
 *
 * # Safety
 * See the crate docs.
 */
enum SpStatus sp_validate(const char *schema_json, const char *document, char **errors_json);

/**
 * Store path that keeps everything in memory, statically allocated.
 */
const char *sp_memory_store(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SANDPIPER_H */
