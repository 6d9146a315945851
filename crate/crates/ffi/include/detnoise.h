#ifndef DETNOISE_H
#define DETNOISE_H

#include <stddef.h>
#include <stdint.h>

typedef enum DnStatus {
  DN_STATUS_OK = 0,
  DN_STATUS_NULL_POINTER = 1,
  DN_STATUS_INVALID_ARGUMENT = 2,
  DN_STATUS_IO = 3,
  DN_STATUS_PARSE = 4,
  DN_STATUS_INVARIANT = 5,
  /**
   * The loss queue is not full yet.
   */
  DN_STATUS_NOT_READY = 6,
  DN_STATUS_INTERNAL = 7,
} DnStatus;

typedef enum DnVerdict {
  DN_VERDICT_CLEAN = 0,
  DN_VERDICT_NOISY = 1,
  DN_VERDICT_DEFERRED = 2,
} DnVerdict;

typedef struct DnDataset DnDataset;

typedef struct DnLossQueue DnLossQueue;

/**
 * Corner-form box in pixels.
 */
typedef struct DnBox {
  double x1;
  double y1;
  double x2;
  double y2;
} DnBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *dn_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *dn_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void dn_string_free(char *s);

/**
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum DnStatus dn_dataset_load(const char *path, struct DnDataset **out);

/**
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
enum DnStatus dn_dataset_parse(const char *json, struct DnDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `path` a valid C string.
 */
enum DnStatus dn_dataset_save(const struct DnDataset *ds, const char *path);

/**
 * Serialize to JSON. Release the string with [`dn_string_free`].
 *
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum DnStatus dn_dataset_to_json(const struct DnDataset *ds, char **out);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void dn_dataset_free(struct DnDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; outputs must be writable.
 */
enum DnStatus dn_dataset_counts(const struct DnDataset *ds,
                                uintptr_t *images,
                                uintptr_t *objects,
                                uintptr_t *classes);

/**
 * Corrupt `ds` into a new dataset. `label_noise` (`symmetric:<r>` /
 * `pair:<r>`) and `box_noise` (`uniform:<n>` / `gaussian:<sigma>`) may be
 * null to skip a stage; `record_path` may be null to skip the record.
 *
 * # Safety
 * Pointers must be valid as described; `out` must be writable.
 */
enum DnStatus dn_dataset_corrupt(const struct DnDataset *ds,
                                 const char *label_noise,
                                 const char *box_noise,
                                 uint64_t seed,
                                 const char *record_path,
                                 struct DnDataset **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DnStatus dn_loss_queue_new(uintptr_t capacity,
                                double acceptance_rate,
                                struct DnLossQueue **out);

/**
 * # Safety
 * `q` must be null or a handle not yet freed.
 */
void dn_loss_queue_free(struct DnLossQueue *q);

/**
 * # Safety
 * `q` must be a live handle.
 */
enum DnStatus dn_loss_queue_push(struct DnLossQueue *q, uint64_t object_id, double loss);

/**
 * Judge `loss` without modifying the queue. `threshold` receives NaN while
 * the verdict is deferred; it may be null.
 *
 * # Safety
 * `q` must be a live handle; `verdict` must be writable.
 */
enum DnStatus dn_loss_queue_judge(const struct DnLossQueue *q,
                                  uint64_t object_id,
                                  double loss,
                                  enum DnVerdict *verdict,
                                  double *threshold);

/**
 * Current threshold; `DN_STATUS_NOT_READY` until the queue is full.
 *
 * # Safety
 * `q` must be a live handle; `out` must be writable.
 */
enum DnStatus dn_loss_queue_threshold(const struct DnLossQueue *q, double *out);

/**
 * # Safety
 * `q` must be a live handle; `out` must be writable.
 */
enum DnStatus dn_loss_queue_len(const struct DnLossQueue *q, uintptr_t *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DnStatus dn_iou(struct DnBox a, struct DnBox b, double *out);

/**
 * Matching fitness of `proposal` against `annotated`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DnStatus dn_fitness(struct DnBox annotated, struct DnBox proposal, double gamma, double *out);

/**
 * Run the refinement pipeline and write its outputs into `out_dir`. `clean`,
 * `record` and `config` may be null; at least one of `clean` and `record`
 * is required. `seed` overrides any seed in the config file.
 *
 * # Safety
 * Non-null pointers must be valid C strings.
 */
enum DnStatus dn_refine_run(const char *noisy,
                            const char *clean,
                            const char *record,
                            const char *config,
                            const char *out_dir,
                            uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DETNOISE_H */
