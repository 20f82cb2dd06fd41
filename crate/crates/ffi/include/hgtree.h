#ifndef HGTREE_H
#define HGTREE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; zero is success.
 */
typedef enum HgtStatus {
  HGT_STATUS_OK = 0,
  HGT_STATUS_NULL_POINTER = 1,
  HGT_STATUS_INVALID_ARGUMENT = 2,
  HGT_STATUS_IO = 3,
  HGT_STATUS_FORMAT = 4,
  HGT_STATUS_GENERATION = 5,
  HGT_STATUS_INTERNAL = 6,
  HGT_STATUS_NUMERIC = 7,
  HGT_STATUS_BUFFER_TOO_SMALL = 8,
  HGT_STATUS_PANIC = 9,
} HgtStatus;

/**
 * A loaded model with its tokenizer settings.
 */
typedef struct HgtModel HgtModel;

/**
 * An owned tree skeleton.
 */
typedef struct HgtTree HgtTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hgt_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t hgt_last_error(char *buf, size_t cap);

/**
 * Loads a checkpoint written by `hgtree train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HgtStatus hgt_model_load(const char *path, struct HgtModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`hgt_model_load`] not yet freed.
 */
void hgt_model_free(struct HgtModel *model);

/**
 * Parameter count, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hgt_model_num_params(const struct HgtModel *model);

/**
 * Samples one tree. `temperature` 0 decodes greedily; `top_k` 0 disables
 * the top-k filter.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HgtStatus hgt_sample(const struct HgtModel *model,
                          uint64_t seed,
                          double temperature,
                          size_t top_k,
                          struct HgtTree **out);

/**
 * Builds a tree from `n_branches * 8` values laid out per branch as
 * `s.x s.y s.z s.r t.x t.y t.z t.r`.
 *
 * # Safety
 * `values` must be valid for `n_branches * 8` reads; `out` must be writable.
 */
enum HgtStatus hgt_tree_from_values(const double *values, size_t n_branches, struct HgtTree **out);

/**
 * Branch count, or 0 for a null handle.
 *
 * # Safety
 * `tree` must be null or a live handle.
 */
size_t hgt_tree_len(const struct HgtTree *tree);

/**
 * Copies the tree's `8 * len` values into `buf`.
 *
 * # Safety
 * `tree` must be a live handle; `buf` must be valid for `cap` writes.
 */
enum HgtStatus hgt_tree_values(const struct HgtTree *tree, double *buf, size_t cap);

/**
 * # Safety
 * `tree` must be null or a live handle not yet freed.
 */
void hgt_tree_free(struct HgtTree *tree);

/**
 * Chamfer distance between `n_points` surface samples of each tree.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum HgtStatus hgt_chamfer(const struct HgtTree *a,
                           const struct HgtTree *b,
                           size_t n_points,
                           uint64_t seed,
                           double *out);

/**
 * Writes the tree as an OBJ tube mesh with `sides` segments per ring.
 *
 * # Safety
 * `tree` must be a live handle; `path` a NUL-terminated string.
 */
enum HgtStatus hgt_export_obj(const struct HgtTree *tree, size_t sides, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HGTREE_H */
