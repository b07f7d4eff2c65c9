#ifndef AERIA_H
#define AERIA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AeriaStatus {
  AERIA_STATUS_OK = 0,
  AERIA_STATUS_NULL_POINTER = 1,
  AERIA_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON or config.
   */
  AERIA_STATUS_PARSE = 3,
  AERIA_STATUS_INVALID_ARGUMENT = 4,
  /**
   * Index past the end of a collection.
   */
  AERIA_STATUS_OUT_OF_RANGE = 5,
  /**
   * Any other library failure (I/O, iteration cap).
   */
  AERIA_STATUS_FAILED = 6,
  AERIA_STATUS_PANIC = 7,
} AeriaStatus;

typedef enum AeriaTransmission {
  /**
   * Output size weighted by the probability of passing every local exit.
   */
  AERIA_TRANSMISSION_SURVIVAL = 0,
  /**
   * Weighted by the forward probability of the partition layer.
   */
  AERIA_TRANSMISSION_PARTITION_FORWARD = 1,
} AeriaTransmission;

typedef enum AeriaDemandKind {
  AERIA_DEMAND_KIND_REQUEST = 0,
  AERIA_DEMAND_KIND_LOCAL_ONLY = 1,
  AERIA_DEMAND_KIND_INFEASIBLE = 2,
} AeriaDemandKind;

typedef enum AeriaPricingPath {
  AERIA_PRICING_PATH_EMPTY = 0,
  AERIA_PRICING_PATH_CONSENSUS = 1,
  AERIA_PRICING_PATH_POSTED_PRICE = 2,
  AERIA_PRICING_PATH_TARGET_EXTRACTION = 3,
  AERIA_PRICING_PATH_LOWEST_DENSITY = 4,
} AeriaPricingPath;

/**
 * Result of one auction run.
 */
typedef struct AeriaOutcome AeriaOutcome;

/**
 * A trained multi-exit model.
 */
typedef struct AeriaProfile AeriaProfile;

typedef struct AeriaBid {
  uint64_t user_id;
  double budget;
  /**
   * Seconds.
   */
  double latency_req;
  double sigma;
} AeriaBid;

typedef struct AeriaLink {
  /**
   * FLOPS.
   */
  double device_flops;
  /**
   * Seconds.
   */
  double prop_delay;
  /**
   * Bits/second.
   */
  double data_rate;
} AeriaLink;

typedef struct AeriaDemandResult {
  enum AeriaDemandKind kind;
  /**
   * Partition point; meaningful unless `kind` is infeasible.
   */
  size_t partition;
  /**
   * Minimal edge allocation in FLOPS, zero unless `kind` is a request.
   */
  double request;
  double density;
  double edge_work;
  double local_latency;
} AeriaDemandResult;

typedef struct AeriaDemand {
  uint64_t user_id;
  double budget;
  double request;
  size_t partition;
  size_t max_partition;
  double edge_work;
  double local_latency;
  double latency_req;
} AeriaDemand;

typedef struct AeriaAuctionParams {
  /**
   * FLOPS.
   */
  double edge_capacity;
  double rental_price;
  double gamma;
  /**
   * Zero selects the library default.
   */
  uint32_t iteration_cap;
} AeriaAuctionParams;

typedef struct AeriaOutcomeSummary {
  bool traded;
  /**
   * Unit price; NaN without a trade.
   */
  double price;
  double revenue;
  enum AeriaPricingPath path;
  size_t winner_count;
  /**
   * Equals the number of demands passed in.
   */
  size_t allocation_count;
  /**
   * A trade was found but its revenue missed the profit floor.
   */
  bool declined;
  bool constraints_ok;
} AeriaOutcomeSummary;

typedef struct AeriaAllocation {
  uint64_t user_id;
  bool winner;
  double allocation;
  /**
   * -1 for losers.
   */
  int64_t partition;
  double payment;
  /**
   * NaN for losers.
   */
  double latency;
} AeriaAllocation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *aeria_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void aeria_string_free(char *s);

/**
 * Parses one profile. A catalog document is accepted if it holds exactly
 * one model.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` writable.
 */
enum AeriaStatus aeria_profile_from_json(const char *json, struct AeriaProfile **out);

/**
 * Looks a model up in the catalog bundled with the library.
 *
 * # Safety
 * `id` must be a nul-terminated string and `out` writable.
 */
enum AeriaStatus aeria_profile_builtin(const char *id, struct AeriaProfile **out);

/**
 * # Safety
 * `p` must be null or a handle from this library not yet freed.
 */
void aeria_profile_free(struct AeriaProfile *p);

/**
 * # Safety
 * `p` must be a live profile handle and `layers` writable.
 */
enum AeriaStatus aeria_profile_layer_count(const struct AeriaProfile *p, size_t *layers);

/**
 * Expected device and edge FLOP when partitioning after layer `s`.
 *
 * # Safety
 * `p` must be a live profile handle; `device` and `edge` writable.
 */
enum AeriaStatus aeria_profile_flops(const struct AeriaProfile *p,
                                     double sigma,
                                     size_t s,
                                     double *device,
                                     double *edge);

/**
 * Cheapest partition and edge request for one bid.
 *
 * # Safety
 * All pointers must be valid; `out` writable.
 */
enum AeriaStatus aeria_analyze_demand(const struct AeriaProfile *p,
                                      const struct AeriaBid *bid,
                                      const struct AeriaLink *link,
                                      double edge_capacity,
                                      enum AeriaTransmission mode,
                                      struct AeriaDemandResult *out);

/**
 * Prices one slot. `demands` may be null when `n` is zero.
 *
 * # Safety
 * `demands` must point to `n` readable entries; `params` valid; `out`
 * writable.
 */
enum AeriaStatus aeria_auction_run(const struct AeriaDemand *demands,
                                   size_t n,
                                   const struct AeriaAuctionParams *params,
                                   uint64_t seed,
                                   struct AeriaOutcome **out);

/**
 * # Safety
 * `o` must be null or a handle from this library not yet freed.
 */
void aeria_outcome_free(struct AeriaOutcome *o);

/**
 * # Safety
 * `o` must be a live outcome handle and `out` writable.
 */
enum AeriaStatus aeria_outcome_summary(const struct AeriaOutcome *o,
                                       struct AeriaOutcomeSummary *out);

/**
 * Allocation of the `index`-th demand, in input order.
 *
 * # Safety
 * `o` must be a live outcome handle and `out` writable.
 */
enum AeriaStatus aeria_outcome_allocation(const struct AeriaOutcome *o,
                                          size_t index,
                                          struct AeriaAllocation *out);

/**
 * Full run (outcome, omniscient benchmark, target draw) as JSON.
 *
 * # Safety
 * `o` must be a live outcome handle and `json` writable.
 */
enum AeriaStatus aeria_outcome_to_json(const struct AeriaOutcome *o, char **json);

/**
 * Runs the market simulation for a JSON config and returns the report
 * as JSON. Relative paths in the config resolve against the working
 * directory. Profiles and traces are loaded as the CLI would.
 *
 * # Safety
 * `config_json` must be a nul-terminated string; `report_json` writable.
 */
enum AeriaStatus aeria_simulate_json(const char *config_json, char **report_json);

/**
 * Snaps `value` onto the random grid `{y^(k + eps)}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AeriaStatus aeria_consensus_estimate(double value, double y, double eps, double *out);

/**
 * Grid base maximizing the worst-case revenue ratio for `delta`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AeriaStatus aeria_optimal_y(double delta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AERIA_H */
