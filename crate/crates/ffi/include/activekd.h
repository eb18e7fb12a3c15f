#ifndef ACTIVEKD_H
#define ACTIVEKD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AkdStatus {
  AKD_STATUS_OK = 0,
  AKD_STATUS_NULL_ARGUMENT = 1,
  AKD_STATUS_INVALID_UTF8 = 2,
  AKD_STATUS_INVALID_INPUT = 3,
  AKD_STATUS_CONFIG = 4,
  AKD_STATUS_PROTOCOL = 5,
  AKD_STATUS_BUDGET = 6,
  AKD_STATUS_IO = 7,
  AKD_STATUS_TRAINING = 8,
  /**
   * The call completed but some run cell or verification suite failed.
   */
  AKD_STATUS_FAILED = 9,
  /**
   * A panic was caught at the boundary.
   */
  AKD_STATUS_INTERNAL = 10,
} AkdStatus;

/**
 * A parsed, validated experiment config.
 */
typedef struct AkdConfig AkdConfig;

/**
 * The manifest of a finished run.
 */
typedef struct AkdManifest AkdManifest;

/**
 * Library version as a static NUL-terminated string.
 */
const char *akd_version(void);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *akd_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void akd_string_free(char *s);

/**
 * Parses and validates a TOML config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AkdStatus akd_config_from_file(const char *path, struct AkdConfig **out);

/**
 * Parses config text; relative paths resolve against `base_dir`, or the
 * current directory when it is null.
 *
 * # Safety
 * `text` and a non-null `base_dir` must be NUL-terminated; `out` must be writable.
 */
enum AkdStatus akd_config_from_str(const char *text, const char *base_dir, struct AkdConfig **out);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void akd_config_free(struct AkdConfig *config);

/**
 * # Safety
 * `config` must be a live handle; `dir` must be NUL-terminated.
 */
enum AkdStatus akd_config_set_output_dir(struct AkdConfig *config, const char *dir);

/**
 * Replaces the seed list.
 *
 * # Safety
 * `config` must be a live handle; `seeds` must point to `len` values.
 */
enum AkdStatus akd_config_set_seeds(struct AkdConfig *config, const uint64_t *seeds, size_t len);

/**
 * Hex SHA-256 of the config; free the result with [`akd_string_free`].
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum AkdStatus akd_config_hash(const struct AkdConfig *config, char **out);

/**
 * Runs the config's grid on `workers` threads. Returns `AKD_STATUS_FAILED`
 * (with the manifest still written to `out`) when some cells failed.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum AkdStatus akd_run(const struct AkdConfig *config, size_t workers, struct AkdManifest **out);

/**
 * # Safety
 * `manifest` must be a live handle.
 */
size_t akd_manifest_cell_count(const struct AkdManifest *manifest);

/**
 * # Safety
 * `manifest` must be a live handle.
 */
size_t akd_manifest_failed_count(const struct AkdManifest *manifest);

/**
 * # Safety
 * `manifest` must be null or a handle from this library not yet freed.
 */
void akd_manifest_free(struct AkdManifest *manifest);

/**
 * Writes plot data for `kind` (`accuracy`, `criteria`, `knn`, `purity`)
 * next to the manifest file and returns the written path.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_path` must be writable.
 */
enum AkdStatus akd_export(const char *manifest_path, const char *kind, char **out_path);

/**
 * Runs one selection strategy over `n` samples with ids `0..n`.
 *
 * `probs` is row-major `n × classes`; `features` is row-major `n × dim`
 * and may be null for strategies that do not read features. The labeled
 * set is `labeled_ids` with classes `labeled_classes`; every other id is
 * unlabeled. `out_ids` receives `query` chosen ids. BADGE needs per-head
 * student outputs and is not available here.
 *
 * # Safety
 * Every non-null pointer must reference the stated number of elements.
 */
enum AkdStatus akd_select(const char *strategy,
                          const double *probs,
                          size_t n,
                          size_t classes,
                          const double *features,
                          size_t dim,
                          const size_t *labeled_ids,
                          const size_t *labeled_classes,
                          size_t n_labeled,
                          size_t query,
                          uint64_t seed,
                          size_t *out_ids);

/**
 * Runs the built-in verification suites; `all_passed` receives the verdict.
 *
 * # Safety
 * `all_passed` must be writable.
 */
enum AkdStatus akd_verify(uint64_t seed, bool *all_passed);

#endif  /* ACTIVEKD_H */
