#ifndef IP2RSNN_H
#define IP2RSNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Ip2Status {
  IP2_STATUS_OK = 0,
  IP2_STATUS_NULL_POINTER = 1,
  IP2_STATUS_INVALID_ARGUMENT = 2,
  IP2_STATUS_SHAPE_MISMATCH = 3,
  IP2_STATUS_IO = 4,
  IP2_STATUS_FORMAT = 5,
  IP2_STATUS_CONFIG = 6,
  IP2_STATUS_BUFFER_TOO_SMALL = 7,
  IP2_STATUS_PANIC = 8,
} Ip2Status;

/**
 * A trained network loaded from a checkpoint.
 */
typedef struct Ip2Network Ip2Network;

/**
 * A generated task: a fixed set of trials.
 */
typedef struct Ip2Task Ip2Task;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ip2_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ip2_version(void);

/**
 * Loads a checkpoint written by the trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum Ip2Status ip2_network_load(const char *path, struct Ip2Network **out);

/**
 * Reports neuron count and input/output widths.
 *
 * # Safety
 * `net` must come from `ip2_network_load`; outputs must be writable.
 */
enum Ip2Status ip2_network_dims(const struct Ip2Network *net,
                                size_t *n_neurons,
                                size_t *input_dim,
                                size_t *output_dim);

/**
 * Runs one noise-free trial. `input` is row-major `steps x input_dim`;
 * `output` receives row-major `steps x output_dim`.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum Ip2Status ip2_network_forward(const struct Ip2Network *net,
                                   const double *input,
                                   size_t steps,
                                   size_t input_dim,
                                   double *output,
                                   size_t output_len);

/**
 * # Safety
 * `net` must come from `ip2_network_load` and not be used afterwards.
 */
void ip2_network_free(struct Ip2Network *net);

/**
 * Generates task `index` of a family, e.g. `"DMS"` or `"GNG-DR-2"`.
 *
 * # Safety
 * `family_name` must be NUL-terminated; `out` must be writable.
 */
enum Ip2Status ip2_task_generate(const char *family_name,
                                 uint64_t index,
                                 uint64_t seed,
                                 double dt_ms,
                                 struct Ip2Task **out);

/**
 * # Safety
 * `task` must come from `ip2_task_generate`; outputs must be writable.
 */
enum Ip2Status ip2_task_dims(const struct Ip2Task *task,
                             size_t *n_trials,
                             size_t *steps,
                             size_t *input_dim,
                             size_t *output_dim);

/**
 * Copies trial `trial`'s input and target, both row-major.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum Ip2Status ip2_task_copy_trial(const struct Ip2Task *task,
                                   size_t trial,
                                   double *input,
                                   size_t input_len,
                                   double *target,
                                   size_t target_len);

/**
 * # Safety
 * `task` must come from `ip2_task_generate` and not be used afterwards.
 */
void ip2_task_free(struct Ip2Task *task);

/**
 * Learnability of (tau_d, tau_s, theta) for a family as three 0/1 bytes.
 *
 * # Safety
 * `family_name` must be NUL-terminated; `bits` must hold three bytes.
 */
enum Ip2Status ip2_mask_for_family(const char *family_name, uint8_t *bits);

/**
 * Multilayer modularity of a labeling. `adjacency` is `n_layers` row-major
 * `n_nodes x n_nodes` blocks; `labels` is `n_layers x n_nodes`.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum Ip2Status ip2_modularity(const double *adjacency,
                              size_t n_layers,
                              size_t n_nodes,
                              double gamma,
                              double coupling,
                              const size_t *labels,
                              double *q);

/**
 * Generalized Louvain. Writes `n_layers x n_nodes` labels and the
 * resulting modularity.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum Ip2Status ip2_louvain(const double *adjacency,
                           size_t n_layers,
                           size_t n_nodes,
                           double gamma,
                           double coupling,
                           uint64_t seed,
                           size_t *labels,
                           size_t labels_len,
                           double *q);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IP2RSNN_H */
