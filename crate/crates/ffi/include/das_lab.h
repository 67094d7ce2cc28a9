#ifndef DAS_LAB_H
#define DAS_LAB_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every exported function.
 */
typedef enum DasStatus {
  DAS_STATUS_OK = 0,
  DAS_STATUS_NULL_POINTER = 1,
  DAS_STATUS_INVALID_ARGUMENT = 2,
  DAS_STATUS_STRUCTURAL = 3,
  DAS_STATUS_MALFORMED_FILE = 4,
  DAS_STATUS_INVALID_LABEL = 5,
  DAS_STATUS_POOL_EXHAUSTED = 6,
  DAS_STATUS_DIVERGENCE = 7,
  DAS_STATUS_IO = 8,
  DAS_STATUS_UTF8 = 9,
  DAS_STATUS_BUFFER_TOO_SMALL = 10,
  DAS_STATUS_PANIC = 11,
} DasStatus;

/**
 * A loaded image dataset.
 */
typedef struct DasDataset DasDataset;

/**
 * A network with its optimizer state, if any.
 */
typedef struct DasModel DasModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *das_last_error(void);

/**
 * Library version as a static string.
 */
const char *das_version(void);

/**
 * Euclidean distance between two vectors of length `len`.
 *
 * # Safety
 * `p` and `q` must point to `len` readable doubles; `out` must be writable.
 */
enum DasStatus das_distance_f64(const double *p, const double *q, size_t len, double *out_distance);

/**
 * One dual-sampling pick from precomputed model outputs.
 *
 * `outputs1` and `outputs2` hold `rows * classes` values, one row per pool
 * item. With `apply_softmax` nonzero the rows are logits and are
 * normalized first; otherwise they are compared as given. The candidate
 * set is `pool_sample` items drawn from `unlabeled` under `seed`.
 *
 * # Safety
 * Array arguments must be readable for the stated lengths and the out
 * pointers writable.
 */
enum DasStatus das_select_one_from_outputs(const double *outputs1,
                                           const double *outputs2,
                                           size_t rows,
                                           size_t classes,
                                           const size_t *unlabeled,
                                           size_t unlabeled_len,
                                           size_t pool_sample,
                                           int32_t apply_softmax,
                                           uint64_t seed,
                                           size_t *out_index,
                                           double *out_score);

/**
 * Greedy farthest-first k-center selection over `points` (`n * dim`
 * values) given existing `centers` (`n_centers * dim`). Writes `k`
 * indices into `out_indices`. With no centers the first pick is point 0.
 *
 * # Safety
 * Arrays must be valid for the stated lengths; `out_indices` must hold `k`.
 */
enum DasStatus das_kcenter_greedy(const double *points,
                                  size_t n,
                                  size_t dim,
                                  const double *centers,
                                  size_t n_centers,
                                  size_t k,
                                  size_t *out_indices);

/**
 * Covering radius of `points` by `centers`.
 *
 * # Safety
 * Arrays must be valid for the stated lengths; `out_radius` writable.
 */
enum DasStatus das_kcenter_radius(const double *points,
                                  size_t n,
                                  size_t dim,
                                  const double *centers,
                                  size_t n_centers,
                                  double *out_radius);

/**
 * Parses one CIFAR-10 binary batch held in memory.
 *
 * # Safety
 * `bytes` must be readable for `len` bytes; `out_dataset` writable.
 */
enum DasStatus das_dataset_parse_cifar10(const uint8_t *bytes,
                                         size_t len,
                                         struct DasDataset **out_dataset);

/**
 * Loads the six CIFAR-10 batch files from a directory.
 *
 * # Safety
 * `dir` must be a nul-terminated string; `out_dataset` writable.
 */
enum DasStatus das_dataset_load_cifar10_dir(const char *dir, struct DasDataset **out_dataset);

/**
 * Number of examples.
 *
 * # Safety
 * `dataset` must come from this library and not be freed.
 */
enum DasStatus das_dataset_len(const struct DasDataset *dataset, size_t *out_len);

/**
 * Label and pixels (CHW order, scaled to [0, 1]) of example `index`.
 * `pixels` must hold `pixels_cap` floats, at least one image.
 *
 * # Safety
 * `dataset` must be live; out pointers writable for the stated sizes.
 */
enum DasStatus das_dataset_example(const struct DasDataset *dataset,
                                   size_t index,
                                   size_t *out_label,
                                   float *pixels,
                                   size_t pixels_cap);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void das_dataset_free(struct DasDataset *dataset);

/**
 * Creates a freshly initialized model. `spec` is a preset name such as
 * `small-conv` or a full model description.
 *
 * # Safety
 * `spec` must be a nul-terminated string; `out_model` writable.
 */
enum DasStatus das_model_new(const char *spec,
                             size_t channels,
                             size_t height,
                             size_t width,
                             size_t num_classes,
                             uint64_t seed,
                             struct DasModel **out_model);

/**
 * Total number of parameters.
 *
 * # Safety
 * `model` must be live; `out_count` writable.
 */
enum DasStatus das_model_param_count(const struct DasModel *model, size_t *out_count);

/**
 * Number of output classes.
 *
 * # Safety
 * `model` must be live; `out_classes` writable.
 */
enum DasStatus das_model_num_classes(const struct DasModel *model, size_t *out_classes);

/**
 * Eval-mode logits for `batch_size` images laid out back to back.
 * `out_logits` must hold `batch_size * num_classes` floats.
 *
 * # Safety
 * `model` must be live and the arrays valid for the stated sizes.
 */
enum DasStatus das_model_logits(const struct DasModel *model,
                                const float *images,
                                size_t batch_size,
                                float *out_logits,
                                size_t out_cap);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must be live; `path` a nul-terminated string.
 */
enum DasStatus das_model_save(const struct DasModel *model, const char *path);

/**
 * Loads a single-precision checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out_model` writable.
 */
enum DasStatus das_model_load(const char *path, struct DasModel **out_model);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void das_model_free(struct DasModel *model);

/**
 * Runs an experiment described by `key = value` config text and writes
 * its CSV files into `out_dir`. `out_steps` receives the number of
 * completed steps.
 *
 * # Safety
 * String arguments must be nul-terminated; `out_steps` writable or null.
 */
enum DasStatus das_run_config(const char *config_text, const char *out_dir, size_t *out_steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAS_LAB_H */
