#ifndef COMIL_H
#define COMIL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define COMIL_OK 0

#define COMIL_NULL_POINTER 1

#define COMIL_INVALID_ARGUMENT 2

#define COMIL_PARSE_ERROR 3

#define COMIL_COMPUTE_ERROR 4

#define COMIL_PANIC 5

/**
 * Opaque team of solved role experts.
 */
typedef struct ComilExperts ComilExperts;

/**
 * Opaque variational HMM.
 */
typedef struct ComilHmm ComilHmm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. Owned by the
 * library.
 */
const char *comil_last_error_message(void);

/**
 * Minimum-cost perfect matching of a `k x k` row-major cost matrix:
 * `perm_out[i]` is the column matched to row `i`. Among optimal matchings the
 * lexicographically smallest is returned.
 *
 * # Safety
 * `cost` must hold `k * k` doubles and `perm_out` room for `k` entries;
 * `total_out` may be null.
 */
int32_t comil_hungarian(const double *cost, uintptr_t k, uintptr_t *perm_out, double *total_out);

/**
 * Parses a role model from its JSON checkpoint.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
int32_t comil_hmm_from_json(const char *json, struct ComilHmm **out);

/**
 * Releases a role model. Null is ignored.
 *
 * # Safety
 * `hmm` must come from `comil_hmm_from_json` and not be used afterwards.
 */
void comil_hmm_free(struct ComilHmm *hmm);

/**
 * Number of latent states, or 0 for a null handle.
 *
 * # Safety
 * `hmm` must be null or a live handle.
 */
uintptr_t comil_hmm_num_states(const struct ComilHmm *hmm);

/**
 * Most likely state sequence of a symbol sequence (categorical model).
 *
 * # Safety
 * `symbols` and `states_out` must each hold `len` entries.
 */
int32_t comil_hmm_viterbi(const struct ComilHmm *hmm,
                          const uintptr_t *symbols,
                          uintptr_t len,
                          uintptr_t *states_out);

/**
 * Most likely state sequence of a vector sequence (diagonal Gaussian model);
 * `data` is `len x dims`, row-major.
 *
 * # Safety
 * `data` must hold `len * dims` doubles and `states_out` `len` entries.
 */
int32_t comil_hmm_viterbi_vectors(const struct ComilHmm *hmm,
                                  const double *data,
                                  uintptr_t len,
                                  uintptr_t dims,
                                  uintptr_t *states_out);

/**
 * Indexes one unordered set of `k` equal-length symbol sequences (`k x len`,
 * row-major, `k` = number of states). `order_out[j]` is the input sequence
 * assigned to role `j`; `entropy_out` (nullable) receives the entropy
 * estimate of the assignment.
 *
 * # Safety
 * `symbols` must hold `k * len` entries and `order_out` `k` entries.
 */
int32_t comil_hmm_assign_categorical(const struct ComilHmm *hmm,
                                     const uintptr_t *symbols,
                                     uintptr_t k,
                                     uintptr_t len,
                                     uintptr_t *order_out,
                                     double *entropy_out);

/**
 * Solves the four surround-role experts on a `grid_side` torus.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t comil_experts_new(int32_t grid_side, double discount, struct ComilExperts **out);

/**
 * Releases an expert team. Null is ignored.
 *
 * # Safety
 * `experts` must come from `comil_experts_new` and not be used afterwards.
 */
void comil_experts_free(struct ComilExperts *experts);

/**
 * Move of the expert for `role` controlling `predator`. `cells` holds
 * `num_predators + 1` `(x, y)` pairs: the predators, then the prey. The move
 * is written as an index into N, S, E, W, Stay (north is +y).
 *
 * # Safety
 * `cells` must hold `2 * (num_predators + 1)` ints; `move_out` must be
 * writable.
 */
int32_t comil_experts_action(const struct ComilExperts *experts,
                             uintptr_t role,
                             const int32_t *cells,
                             uintptr_t num_predators,
                             uintptr_t predator,
                             uint8_t *move_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMIL_H */
