#ifndef EVSTAR_H
#define EVSTAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum EvstarStatus {
    EVSTAR_STATUS_OK = 0,
    EVSTAR_STATUS_NULL_POINTER = 1,
    EVSTAR_STATUS_INVALID_ARGUMENT = 2,
    EVSTAR_STATUS_PARSE = 3,
    EVSTAR_STATUS_IO = 4,
    EVSTAR_STATUS_EMPTY_INPUT = 5,
    EVSTAR_STATUS_INSUFFICIENT_CORRESPONDENCES = 6,
    EVSTAR_STATUS_DISCONNECTED = 7,
    EVSTAR_STATUS_NUMERICAL = 8,
    EVSTAR_STATUS_PANIC = 9,
} EvstarStatus;

/**
 * Streaming Hough accumulator for one window.
 */
typedef struct EvstarAccumulator EvstarAccumulator;

/**
 * Multiresolution bank over a stream of known duration.
 */
typedef struct EvstarBank EvstarBank;

/**
 * Relative rotations between grid times.
 */
typedef struct EvstarEdges EvstarEdges;

/**
 * Absolute attitudes on the time grid.
 */
typedef struct EvstarSolution EvstarSolution;

/**
 * Hough transform settings; see [`evstar_hough_config_default`].
 */
typedef struct EvstarHoughConfig {
    uint32_t subdivision_level;
    uint32_t delta;
    double bin_size;
    double time_scale_ms;
    double eps_dir;
} EvstarHoughConfig;

typedef struct EvstarIntrinsics {
    double fx;
    double fy;
    double cx;
    double cy;
} EvstarIntrinsics;

/**
 * One event. `polarity` is 0 or 1.
 */
typedef struct EvstarEvent {
    uint64_t t_us;
    double x;
    double y;
    uint8_t polarity;
} EvstarEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *evstar_last_error(void);

/**
 * Library version, a static string.
 */
const char *evstar_version(void);

struct EvstarHoughConfig evstar_hough_config_default(void);

/**
 * Angle in radians between two rotations.
 *
 * # Safety
 * `a` and `b` must each point to nine readable doubles.
 */
enum EvstarStatus evstar_angular_distance(const double *a, const double *b, double *out);

/**
 * Creates an accumulator for the window `[alpha_us, beta_us]`, recentred on
 * the middle of the sensor × window box.
 *
 * # Safety
 * `config` and `k` must be valid pointers; `out` must be writable.
 */
enum EvstarStatus evstar_accumulator_new(const struct EvstarHoughConfig *config,
                                         const struct EvstarIntrinsics *k,
                                         uint32_t width,
                                         uint32_t height,
                                         uint64_t alpha_us,
                                         uint64_t beta_us,
                                         struct EvstarAccumulator **out);

/**
 * Votes `n` time-ordered events.
 *
 * # Safety
 * `acc` must come from [`evstar_accumulator_new`]; `events` must point to
 * `n` events.
 */
enum EvstarStatus evstar_accumulator_push(struct EvstarAccumulator *acc,
                                          const struct EvstarEvent *events,
                                          size_t n);

/**
 * Current correspondence matrix `C`, row major.
 *
 * # Safety
 * `acc` must be a live accumulator; `out` must hold nine doubles.
 */
enum EvstarStatus evstar_accumulator_correspondence(const struct EvstarAccumulator *acc,
                                                    double *out);

/**
 * Relative rotation `R_alpha·R_betaᵀ` from the votes so far.
 *
 * # Safety
 * `acc` must be a live accumulator; `rotation` must hold nine doubles;
 * `n_correspondences` may be NULL.
 */
enum EvstarStatus evstar_accumulator_finalize(const struct EvstarAccumulator *acc,
                                              double *rotation,
                                              size_t *n_correspondences);

/**
 * # Safety
 * `acc` must come from [`evstar_accumulator_new`] or be NULL, and must not
 * be used afterwards.
 */
void evstar_accumulator_free(struct EvstarAccumulator *acc);

/**
 * Creates a bank planned over `[0, duration_us]`. `config_text` holds
 * `key=value` lines, or is NULL for the defaults.
 *
 * # Safety
 * `config_text` must be NULL or a NUL-terminated string; `k` valid; `out`
 * writable.
 */
enum EvstarStatus evstar_bank_new(const char *config_text,
                                  const struct EvstarIntrinsics *k,
                                  uint32_t width,
                                  uint32_t height,
                                  uint64_t duration_us,
                                  struct EvstarBank **out);

/**
 * Dispatches `n` events, which must continue the stream in time order.
 *
 * # Safety
 * `bank` must be a live bank; `events` must point to `n` events.
 */
enum EvstarStatus evstar_bank_push(struct EvstarBank *bank,
                                   const struct EvstarEvent *events,
                                   size_t n);

/**
 * Closes every window and returns the successful relative rotations. The
 * bank accepts no more events afterwards but must still be freed.
 *
 * # Safety
 * `bank` must be a live bank; `out` writable.
 */
enum EvstarStatus evstar_bank_finish(struct EvstarBank *bank, struct EvstarEdges **out);

/**
 * # Safety
 * `bank` must come from [`evstar_bank_new`] or be NULL.
 */
void evstar_bank_free(struct EvstarBank *bank);

/**
 * Creates an empty edge set, to be filled with [`evstar_edges_add`].
 *
 * # Safety
 * `out` must be writable.
 */
enum EvstarStatus evstar_edges_new(struct EvstarEdges **out);

/**
 * Appends the relative rotation `R_alpha·R_betaᵀ`.
 *
 * # Safety
 * `edges` must be live; `rotation` must point to nine doubles.
 */
enum EvstarStatus evstar_edges_add(struct EvstarEdges *edges,
                                   uint64_t alpha_us,
                                   uint64_t beta_us,
                                   const double *rotation);

/**
 * Number of edges; 0 for NULL.
 *
 * # Safety
 * `edges` must be live or NULL.
 */
size_t evstar_edges_len(const struct EvstarEdges *edges);

/**
 * # Safety
 * `edges` must be live; the outputs writable (`rotation`: nine doubles).
 */
enum EvstarStatus evstar_edges_get(const struct EvstarEdges *edges,
                                   size_t i,
                                   uint64_t *alpha_us,
                                   uint64_t *beta_us,
                                   double *rotation);

/**
 * # Safety
 * `edges` must come from this library or be NULL.
 */
void evstar_edges_free(struct EvstarEdges *edges);

/**
 * Fuses `edges` with `n_anchors` absolute attitudes (`anchor_times_us[i]`,
 * rotation at `anchor_rotations + 9·i`) and re-orients the result.
 * `max_iters == 0` selects the default iteration cap.
 *
 * # Safety
 * `edges` must be live; the anchor arrays must hold `n_anchors` entries;
 * `out` writable.
 */
enum EvstarStatus evstar_average(const struct EvstarEdges *edges,
                                 const uint64_t *anchor_times_us,
                                 const double *anchor_rotations,
                                 size_t n_anchors,
                                 uint64_t dt_us,
                                 double anchor_weight,
                                 size_t max_iters,
                                 double tol,
                                 struct EvstarSolution **out);

/**
 * Number of solved attitudes; 0 for NULL.
 *
 * # Safety
 * `solution` must be live or NULL.
 */
size_t evstar_solution_len(const struct EvstarSolution *solution);

/**
 * Whether the solver met its tolerance; false for NULL.
 *
 * # Safety
 * `solution` must be live or NULL.
 */
bool evstar_solution_converged(const struct EvstarSolution *solution);

/**
 * # Safety
 * `solution` must be live; outputs writable (`rotation`: nine doubles).
 */
enum EvstarStatus evstar_solution_get(const struct EvstarSolution *solution,
                                      size_t i,
                                      uint64_t *t_us,
                                      double *rotation);

/**
 * # Safety
 * `solution` must come from [`evstar_average`] or be NULL.
 */
void evstar_solution_free(struct EvstarSolution *solution);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVSTAR_H */
