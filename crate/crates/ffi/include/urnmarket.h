#ifndef URNMARKET_H
#define URNMARKET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Influence condition codes accepted by [`um_market_run`].
 */
typedef enum UmCondition {
  UM_CONDITION_INDEPENDENT = 0,
  UM_CONDITION_WEAK = 1,
  UM_CONDITION_STRONG = 2,
} UmCondition;

/**
 * Result code of every fallible call.
 */
typedef enum UmStatus {
  UM_STATUS_OK = 0,
  UM_STATUS_INVALID_ARGUMENT = 1,
  UM_STATUS_INVALID_STATE = 2,
  UM_STATUS_INSUFFICIENT_DATA = 3,
  UM_STATUS_UNDEFINED_CORRELATION = 4,
  UM_STATUS_CONFIG = 5,
  UM_STATUS_IO = 6,
  UM_STATUS_NULL_POINTER = 7,
  UM_STATUS_PANIC = 8,
} UmStatus;

/**
 * Parsed and validated experiment config.
 */
typedef struct UmConfig UmConfig;

/**
 * Item appeals plus agent policy.
 */
typedef struct UmMarket UmMarket;

/**
 * Event log of one simulated world.
 */
typedef struct UmTrace UmTrace;

/**
 * One market action.
 */
typedef struct UmEvent {
  uint64_t step;
  uint64_t agent_id;
  uint64_t item_id;
  double signal_shown;
  uint8_t rating;
  bool downloaded;
  bool is_puppet;
} UmEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Returns the buffer size
 * required; pass a null `buf` to query it.
 */
size_t um_last_error_message(char *buf, size_t len);

/**
 * Seed of stream `stream_id` under `master_seed`.
 */
uint64_t um_derive_seed(uint64_t master_seed, uint64_t stream_id);

/**
 * Final share of color 0 for `n_runs` independent urn runs, written to
 * `out[0..n_runs]`.
 */
enum UmStatus um_urn_final_shares(const uint64_t *initial,
                                  size_t n_colors,
                                  double gamma,
                                  uint64_t increment,
                                  uint64_t steps,
                                  uint64_t n_runs,
                                  uint64_t master_seed,
                                  double *out);

enum UmStatus um_gini(const double *shares, size_t n, double *out);

/**
 * `shares` is row-major: `n_worlds` rows of `n_items` shares.
 */
enum UmStatus um_unpredictability(const double *shares,
                                  size_t n_worlds,
                                  size_t n_items,
                                  double *out);

enum UmStatus um_ks_uniform(const double *samples, size_t n, double *out);

enum UmStatus um_ks_two_sample(const double *a,
                               size_t n_a,
                               const double *b,
                               size_t n_b,
                               double *out);

/**
 * `initial_shares` and `final_shares` both hold `n` values.
 */
enum UmStatus um_martingale_residual(const double *initial_shares,
                                     const double *final_shares,
                                     size_t n,
                                     double *out);

/**
 * Parse a JSON config. On success `*out` owns a handle for [`um_config_free`].
 */
enum UmStatus um_config_parse(const char *json, struct UmConfig **out);

void um_config_free(struct UmConfig *config);

enum UmStatus um_config_set_seed(struct UmConfig *config, uint64_t master_seed);

/**
 * Effective config as JSON. Same buffer convention as
 * [`um_last_error_message`]; returns 0 for a null handle.
 */
size_t um_config_to_json(const struct UmConfig *config, char *buf, size_t len);

/**
 * Run the experiment and write its output bundle to `out_dir`.
 * `threads = 0` uses the default worker count.
 */
enum UmStatus um_run(const struct UmConfig *config, const char *out_dir, uint32_t threads);

/**
 * Market over `appeals[0..n_items]`, each in [0, 1].
 */
enum UmStatus um_market_new(const double *appeals,
                            size_t n_items,
                            double alpha,
                            double beta,
                            double rank_bias,
                            uint64_t n_agents,
                            struct UmMarket **out);

void um_market_free(struct UmMarket *market);

/**
 * Simulate one world. `condition` is a [`UmCondition`] code.
 */
enum UmStatus um_market_run(const struct UmMarket *market,
                            uint32_t condition,
                            uint64_t world_seed,
                            struct UmTrace **out);

void um_trace_free(struct UmTrace *trace);

/**
 * Number of events, or 0 for a null handle.
 */
size_t um_trace_len(const struct UmTrace *trace);

/**
 * Number of items, or 0 for a null handle.
 */
size_t um_trace_n_items(const struct UmTrace *trace);

enum UmStatus um_trace_event(const struct UmTrace *trace, size_t index, struct UmEvent *out);

/**
 * Copy the final shares into `out`, which must hold `len == n_items` values.
 */
enum UmStatus um_trace_final_shares(const struct UmTrace *trace, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URNMARKET_H */
