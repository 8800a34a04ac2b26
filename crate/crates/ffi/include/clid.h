#ifndef CLID_H
#define CLID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClidStatus {
  CLID_STATUS_OK = 0,
  CLID_STATUS_NULL_ARGUMENT = 1,
  CLID_STATUS_INVALID_UTF8 = 2,
  CLID_STATUS_INVALID_ARGUMENT = 3,
  CLID_STATUS_IO = 4,
  CLID_STATUS_PANIC = 5,
} ClidStatus;

/**
 * Opaque search index over a snapshot, using the built-in hash embedder.
 */
typedef struct ClidIndex ClidIndex;

/**
 * Opaque corpus snapshot.
 */
typedef struct ClidSnapshot ClidSnapshot;

/**
 * Point estimate and interval for a proportion.
 */
typedef struct ClidInterval {
  double p_hat;
  double margin;
  double lower;
  double upper;
} ClidInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread; do not free.
 */
const char *clid_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *clid_version(void);

/**
 * # Safety
 * `s` must come from a clid function that hands out strings and must not be
 * freed twice. NULL is ignored.
 */
void clid_string_free(char *s);

/**
 * Sets `*keep` to whether a block of `block_text` passes the length filter
 * (character counts, inclusive bounds).
 *
 * # Safety
 * `block_text` must be a NUL-terminated string and `keep` writable.
 */
enum ClidStatus clid_filter_block(const char *block_text,
                                  size_t min_chars,
                                  size_t max_chars,
                                  bool *keep);

/**
 * Cochran sample size for confidence multiplier `z`, expected proportion
 * `p` and margin of error `margin`.
 *
 * # Safety
 * `n` must be writable.
 */
enum ClidStatus clid_cochran(double z, double p, double margin, uint64_t *n);

/**
 * Normal-approximation interval for `successes` out of `n`.
 *
 * # Safety
 * `interval` must be writable.
 */
enum ClidStatus clid_proportion_ci(uint64_t successes,
                                   uint64_t n,
                                   double confidence,
                                   struct ClidInterval *interval);

/**
 * AUROC of `scores` against 0/1 `labels`, both of length `len`.
 *
 * # Safety
 * `scores` and `labels` must point to `len` readable elements; `auroc`
 * must be writable.
 */
enum ClidStatus clid_auroc(const double *scores, const uint8_t *labels, size_t len, double *auroc);

/**
 * Loads a snapshot written by `clid ingest`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `snapshot` writable. Release
 * the handle with [`clid_snapshot_free`].
 */
enum ClidStatus clid_snapshot_load(const char *path, struct ClidSnapshot **snapshot);

/**
 * Number of blocks, or 0 for NULL.
 *
 * # Safety
 * `snapshot` must be NULL or a live handle.
 */
size_t clid_snapshot_len(const struct ClidSnapshot *snapshot);

/**
 * # Safety
 * `snapshot` must be NULL or a handle not yet freed.
 */
void clid_snapshot_free(struct ClidSnapshot *snapshot);

/**
 * Builds an index over `snapshot` with a `dim`-wide hash embedder. The
 * snapshot handle may be freed afterwards.
 *
 * # Safety
 * `snapshot` must be a live handle and `index` writable. Release the
 * result with [`clid_index_free`].
 */
enum ClidStatus clid_index_build(const struct ClidSnapshot *snapshot,
                                 size_t dim,
                                 struct ClidIndex **index);

/**
 * Loads an index written by `clid index` (hash embedder only).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `index` writable.
 */
enum ClidStatus clid_index_load(const char *path, struct ClidIndex **index);

/**
 * Top-`k` blocks for `query` as a JSON array of
 * `{block_id, similarity, rank}`. Blocks of the document titled
 * `exclude_title` are skipped; pass NULL to search everything.
 *
 * # Safety
 * `index` must be a live handle, `query` NUL-terminated, `exclude_title`
 * NULL or NUL-terminated, and `json` writable. Free the string with
 * [`clid_string_free`].
 */
enum ClidStatus clid_index_search(const struct ClidIndex *index,
                                  const char *query,
                                  size_t k,
                                  const char *exclude_title,
                                  char **json);

/**
 * # Safety
 * `index` must be NULL or a handle not yet freed.
 */
void clid_index_free(struct ClidIndex *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLID_H */
