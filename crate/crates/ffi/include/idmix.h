#ifndef IDMIX_H
#define IDMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IdmixStatus {
  IDMIX_STATUS_OK = 0,
  IDMIX_STATUS_NULL_ARGUMENT = 1,
  IDMIX_STATUS_INVALID_UTF8 = 2,
  IDMIX_STATUS_CONFIG = 3,
  IDMIX_STATUS_SCHEMA = 4,
  IDMIX_STATUS_NUMERIC = 5,
  IDMIX_STATUS_DIMENSION = 6,
  IDMIX_STATUS_STATE = 7,
  IDMIX_STATUS_DEGENERATE = 8,
  IDMIX_STATUS_IO = 9,
  IDMIX_STATUS_BUFFER_TOO_SMALL = 10,
  IDMIX_STATUS_PANIC = 11,
} IdmixStatus;

/**
 * A loaded or generated dataset.
 */
typedef struct IdmixDataset IdmixDataset;

/**
 * Trained encoder and projection head.
 */
typedef struct IdmixModel IdmixModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length excluding the terminator. `buf` may be null when `len` is 0.
 */
size_t idmix_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *idmix_version(void);

/**
 * Loads a node-classification dataset directory.
 */
enum IdmixStatus idmix_dataset_load_node(const char *dir, struct IdmixDataset **out);

/**
 * Loads a graph-classification dataset in TU format.
 */
enum IdmixStatus idmix_dataset_load_tu(const char *dir, struct IdmixDataset **out);

/**
 * Generates a stochastic block model node dataset with noisy one-hot block
 * features and a stratified split.
 */
enum IdmixStatus idmix_dataset_sbm(const size_t *block_sizes,
                                   size_t num_blocks,
                                   double p_in,
                                   double p_out,
                                   uint64_t seed,
                                   double train_frac,
                                   double val_frac,
                                   struct IdmixDataset **out);

/**
 * Number of embedding rows: nodes for node datasets, graphs otherwise.
 */
enum IdmixStatus idmix_dataset_num_rows(const struct IdmixDataset *ds, size_t *out);

void idmix_dataset_free(struct IdmixDataset *ds);

/**
 * Pretrains a model. `config_toml` is a run configuration in TOML; null
 * means all defaults. Only its `train` table is used. `final_loss` may be
 * null.
 */
enum IdmixStatus idmix_pretrain(const struct IdmixDataset *ds,
                                const char *config_toml,
                                struct IdmixModel **out,
                                double *final_loss);

enum IdmixStatus idmix_model_embedding_dim(const struct IdmixModel *model, size_t *out);

/**
 * Writes the row-major embedding matrix into `buf`, which must hold
 * `rows * cols` doubles. On `BUFFER_TOO_SMALL` the required shape is still
 * stored in `rows` and `cols`.
 */
enum IdmixStatus idmix_embed(const struct IdmixModel *model,
                             const struct IdmixDataset *ds,
                             double *buf,
                             size_t len,
                             size_t *rows,
                             size_t *cols);

enum IdmixStatus idmix_model_save(const struct IdmixModel *model, const char *path);

enum IdmixStatus idmix_model_load(const char *path, struct IdmixModel **out);

void idmix_model_free(struct IdmixModel *model);

/**
 * Linear-probe accuracy of the frozen embeddings. Node datasets use their
 * split; graph datasets use stratified k-fold. Probe settings and the seed
 * come from `config_toml` (null for defaults).
 */
enum IdmixStatus idmix_probe(const struct IdmixModel *model,
                             const struct IdmixDataset *ds,
                             const char *config_toml,
                             double *accuracy_mean,
                             double *accuracy_std);

/**
 * Finite-difference check of one full training step on a small synthetic
 * problem. Stores the largest relative gradient error.
 */
enum IdmixStatus idmix_gradcheck(uint64_t seed, double eps, double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IDMIX_H */
