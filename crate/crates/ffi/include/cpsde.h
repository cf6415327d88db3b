#ifndef CPSDE_H
#define CPSDE_H

/* Generated by cbindgen from cpsde-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes, plus FFI-specific ones.
 */
typedef enum {
  CPSDE_STATUS_OK = 0,
  CPSDE_STATUS_CONFIG_ERROR = 1,
  CPSDE_STATUS_IO_ERROR = 2,
  CPSDE_STATUS_NUMERIC_ERROR = 3,
  CPSDE_STATUS_NULL_ARGUMENT = 4,
  CPSDE_STATUS_BUFFER_TOO_SMALL = 5,
  CPSDE_STATUS_INTERNAL_ERROR = 6,
} CpsdeStatus;

/**
 * An immutable batch of sample paths on a shared time grid.
 */
typedef struct CpsdeDataset CpsdeDataset;

/**
 * A trained model: segmented generator, discriminator, parameters, and
 * the normalization statistics needed to map samples to data units.
 */
typedef struct CpsdeModel CpsdeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpsde_version(void);

/**
 * Message for the most recent failure on this thread; valid until the
 * next failing call on the same thread.
 */
const char *cpsde_last_error(void);

/**
 * Load a dataset from a CSV file in the interchange schema
 * (`sample_id,step,t,x_0..`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` a valid pointer.
 */
CpsdeStatus cpsde_dataset_from_csv(const char *path, CpsdeDataset **out);

/**
 * Synthesize a dataset from the `[data.synthetic]` section of an
 * experiment configuration in TOML (pass an empty string for the
 * built-in benchmark defaults).
 *
 * # Safety
 * `config_toml` must be a valid NUL-terminated string; `out` a valid
 * pointer.
 */
CpsdeStatus cpsde_dataset_synthesize(const char *config_toml, uint64_t seed, CpsdeDataset **out);

/**
 * # Safety
 * `ds` must be a valid dataset handle; `path` a valid string.
 */
CpsdeStatus cpsde_dataset_save_csv(const CpsdeDataset *ds, const char *path);

/**
 * Number of paths, or 0 for a NULL handle.
 *
 * # Safety
 * `ds` must be NULL or a live handle from this library.
 */
uintptr_t cpsde_dataset_num_paths(const CpsdeDataset *ds);

/**
 * Number of time steps, or 0 for a NULL handle.
 *
 * # Safety
 * `ds` must be NULL or a live handle from this library.
 */
uintptr_t cpsde_dataset_num_steps(const CpsdeDataset *ds);

/**
 * Number of value channels, or 0 for a NULL handle.
 *
 * # Safety
 * `ds` must be NULL or a live handle from this library.
 */
uintptr_t cpsde_dataset_num_channels(const CpsdeDataset *ds);

/**
 * # Safety
 * `ds` must come from this library and not have been freed.
 */
void cpsde_dataset_free(CpsdeDataset *ds);

/**
 * Train a segment-wise neural SDE GAN on the dataset. `config_toml`
 * supplies the `[train]` and `[model]` sections (empty string for
 * defaults); `seed` keys all randomness.
 *
 * # Safety
 * `ds` must be a valid dataset handle, `config_toml` a valid string,
 * `out` a valid pointer.
 */
CpsdeStatus cpsde_train(const CpsdeDataset *ds,
                        const char *config_toml,
                        uint64_t seed,
                        CpsdeModel **out);

/**
 * # Safety
 * `model` must be a valid model handle; `dir` a valid string.
 */
CpsdeStatus cpsde_model_save(const CpsdeModel *model, const char *dir);

/**
 * # Safety
 * `dir` must be a valid string; `out` a valid pointer.
 */
CpsdeStatus cpsde_model_load(const char *dir, CpsdeModel **out);

/**
 * Copy the model's change point estimate into `out_buf`. `written`
 * receives the number of indices; when `cap` is too small nothing is
 * copied and the call returns `CPSDE_BUFFER_TOO_SMALL`.
 *
 * # Safety
 * `model`, `out_buf` (with capacity `cap`), and `written` must be valid.
 */
CpsdeStatus cpsde_model_change_points(const CpsdeModel *model,
                                      uintptr_t *out_buf,
                                      uintptr_t cap,
                                      uintptr_t *written);

/**
 * Batch-averaged sliding-window discriminator scores of `ds` under the
 * trained model (window size from training). `written` receives
 * `n_steps - window + 1`.
 *
 * # Safety
 * `model`, `ds`, `out_buf` (capacity `cap`), and `written` must be valid.
 */
CpsdeStatus cpsde_detect_scores(const CpsdeModel *model,
                                const CpsdeDataset *ds,
                                double *out_buf,
                                uintptr_t cap,
                                uintptr_t *written);

/**
 * Estimate up to `k` change points of `ds` from the trained
 * discriminator's score sequence. `written` receives the number found.
 *
 * # Safety
 * `model`, `ds`, `out_buf` (capacity `cap`), and `written` must be valid.
 */
CpsdeStatus cpsde_detect_change_points(const CpsdeModel *model,
                                       const CpsdeDataset *ds,
                                       uintptr_t k,
                                       uintptr_t *out_buf,
                                       uintptr_t cap,
                                       uintptr_t *written);

/**
 * Generate `n` sample paths from the model in data units, on the same
 * grid as `like`.
 *
 * # Safety
 * `model`, `like`, and `out` must be valid.
 */
CpsdeStatus cpsde_model_generate(const CpsdeModel *model,
                                 const CpsdeDataset *like,
                                 uintptr_t n,
                                 uint64_t seed,
                                 CpsdeDataset **out);

/**
 * Unbiased squared MMD between two datasets on the same grid.
 *
 * # Safety
 * `a`, `b`, and `out` must be valid.
 */
CpsdeStatus cpsde_mmd(const CpsdeDataset *a, const CpsdeDataset *b, double *out);

/**
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void cpsde_model_free(CpsdeModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPSDE_H */
