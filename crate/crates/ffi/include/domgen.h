#ifndef DOMGEN_H
#define DOMGEN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values match the command-line exit codes where
 * both exist.
 */
typedef enum DgStatus {
  DG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DG_STATUS_NULL_POINTER = 1,
  /**
   * Bad shapes, malformed files, or otherwise invalid input.
   */
  DG_STATUS_INVALID_INPUT = 2,
  DG_STATUS_IO = 3,
  DG_STATUS_NUMERIC = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  DG_STATUS_INTERNAL = 5,
} DgStatus;

/**
 * Which group of domains to query. Passed across the boundary as a
 * plain integer and checked on entry.
 */
typedef enum DgSplit {
  DG_SPLIT_TRAIN = 0,
  DG_SPLIT_VAL = 1,
  DG_SPLIT_TEST = 2,
} DgSplit;

/**
 * A loaded dataset.
 */
typedef struct DgDataset DgDataset;

/**
 * A prototypical embedding network.
 */
typedef struct DgEmbedder DgEmbedder;

/**
 * A trained classifier with the embedder it was trained against.
 */
typedef struct DgModel DgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's most recent failure, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *dg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dg_version(void);

/**
 * Load a JSON-lines dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DgStatus dg_dataset_load(const char *path, struct DgDataset **out);

/**
 * # Safety
 * `ds` must come from [`dg_dataset_load`] and not be freed twice.
 */
void dg_dataset_free(struct DgDataset *ds);

/**
 * Input dimension and class count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DgStatus dg_dataset_dims(const struct DgDataset *ds, size_t *dim, size_t *classes);

/**
 * Number of domains in one split (a [`DgSplit`] value).
 *
 * # Safety
 * All pointers must be valid.
 */
enum DgStatus dg_dataset_domain_count(const struct DgDataset *ds, uint32_t split, size_t *count);

/**
 * Load an embedding checkpoint written by `domgen train-proto`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DgStatus dg_embedder_load(const char *path, struct DgEmbedder **out);

/**
 * # Safety
 * `e` must come from [`dg_embedder_load`] and not be freed twice.
 */
void dg_embedder_free(struct DgEmbedder *e);

/**
 * Input dimension and prototype dimension `d_D`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DgStatus dg_embedder_dims(const struct DgEmbedder *e, size_t *input_dim, size_t *embed_dim);

/**
 * Prototype (mean embedding) of `rows` points; writes `d_D` values.
 *
 * # Safety
 * `points` must hold `rows * cols` doubles and `mu` at least `mu_len`.
 */
enum DgStatus dg_embedder_prototype(const struct DgEmbedder *e,
                                    const double *points,
                                    size_t rows,
                                    size_t cols,
                                    double *mu,
                                    size_t mu_len);

/**
 * Domain membership probabilities of each query point against
 * `n_protos` prototypes (row-major, `n_protos × d_D`); writes a
 * `rows × n_protos` matrix.
 *
 * # Safety
 * Buffers must hold the sizes stated.
 */
enum DgStatus dg_embedder_membership(const struct DgEmbedder *e,
                                     const double *points,
                                     size_t rows,
                                     size_t cols,
                                     const double *prototypes,
                                     size_t n_protos,
                                     double *probs,
                                     size_t probs_len);

/**
 * Load a model checkpoint written by `domgen train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DgStatus dg_model_load(const char *path, struct DgModel **out);

/**
 * # Safety
 * `m` must come from [`dg_model_load`] and not be freed twice.
 */
void dg_model_free(struct DgModel *m);

/**
 * Input dimension, prototype dimension (0 for a prototype-free model)
 * and class count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DgStatus dg_model_dims(const struct DgModel *m,
                            size_t *input_dim,
                            size_t *embed_dim,
                            size_t *classes);

/**
 * Prototype of a domain from `rows` of its points using the model's own
 * embedder. Writes `embed_dim` values (none for a prototype-free model).
 *
 * # Safety
 * `points` must hold `rows * cols` doubles and `mu` at least `mu_len`.
 */
enum DgStatus dg_model_prototype(const struct DgModel *m,
                                 const double *points,
                                 size_t rows,
                                 size_t cols,
                                 double *mu,
                                 size_t mu_len);

/**
 * Class logits for `rows` inputs from a domain with prototype `mu`;
 * writes a `rows × classes` matrix.
 *
 * # Safety
 * Buffers must hold the sizes stated.
 */
enum DgStatus dg_model_logits(const struct DgModel *m,
                              const double *mu,
                              size_t mu_len,
                              const double *x,
                              size_t rows,
                              size_t cols,
                              double *logits,
                              size_t logits_len);

/**
 * Predicted class of each of `rows` inputs from a domain with
 * prototype `mu`.
 *
 * # Safety
 * Buffers must hold the sizes stated.
 */
enum DgStatus dg_model_predict(const struct DgModel *m,
                               const double *mu,
                               size_t mu_len,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               size_t *labels,
                               size_t labels_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMGEN_H */
