#ifndef MARCHON_H
#define MARCHON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MarchonStatus {
  MARCHON_STATUS_OK = 0,
  MARCHON_STATUS_NULL_POINTER = 1,
  MARCHON_STATUS_INVALID_ARGUMENT = 2,
  MARCHON_STATUS_REDUCIBLE = 3,
  MARCHON_STATUS_DIVERGED = 4,
  MARCHON_STATUS_CONFIG = 5,
  MARCHON_STATUS_INTERNAL = 6,
} MarchonStatus;

typedef enum MarchonTopology {
  MARCHON_TOPOLOGY_COMPLETE = 0,
  MARCHON_TOPOLOGY_STAR = 1,
  MARCHON_TOPOLOGY_ERDOS_RENYI = 2,
  MARCHON_TOPOLOGY_WATTS_STROGATZ = 3,
} MarchonTopology;

typedef enum MarchonWeighting {
  MARCHON_WEIGHTING_METROPOLIS = 0,
  MARCHON_WEIGHTING_SIMPLE_RANDOM_WALK = 1,
} MarchonWeighting;

typedef enum MarchonSchedule {
  // `c / sqrt(t)`.
  MARCHON_SCHEDULE_MARCHON = 0,
  // `c / t^q`.
  MARCHON_SCHEDULE_MCGD = 1,
  MARCHON_SCHEDULE_MARKOV_SGD = 2,
  MARCHON_SCHEDULE_MCSGD_EMD = 3,
  // The constant `c`.
  MARCHON_SCHEDULE_CONSTANT = 4,
} MarchonSchedule;

// Opaque transition-matrix handle.
typedef struct MarchonChain MarchonChain;

// Opaque graph handle.
typedef struct MarchonGraph MarchonGraph;

// Spectral constants of a chain. `c_p` and `tau` are only meaningful when
// `diagonalizable` is true.
typedef struct MarchonSpectrum {
  double rho;
  double slem;
  double c_p;
  uint64_t tau;
  bool diagonalizable;
} MarchonSpectrum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *marchon_last_error(void);

// Builds a connected graph. `param_a` is `p` for Erdos-Renyi and `k` for
// Watts-Strogatz; `param_b` is the Watts-Strogatz rewiring probability.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MarchonStatus marchon_graph_new(enum MarchonTopology topology,
                                     size_t n,
                                     double param_a,
                                     double param_b,
                                     uint64_t seed,
                                     struct MarchonGraph **out);

// # Safety
// `graph` must be a live handle and `out` writable.
enum MarchonStatus marchon_graph_edge_count(const struct MarchonGraph *graph, size_t *out);

// # Safety
// `graph` must be null or a handle from [`marchon_graph_new`] not yet freed.
void marchon_graph_free(struct MarchonGraph *graph);

// # Safety
// `graph` must be a live handle and `out` writable.
enum MarchonStatus marchon_chain_new(const struct MarchonGraph *graph,
                                     enum MarchonWeighting weighting,
                                     struct MarchonChain **out);

// Wraps a row-major `n x n` row-stochastic matrix.
//
// # Safety
// `data` must point to `n * n` readable doubles and `out` be writable.
enum MarchonStatus marchon_chain_from_matrix(const double *data,
                                             size_t n,
                                             struct MarchonChain **out);

// # Safety
// `chain` must be null or a live chain handle.
void marchon_chain_free(struct MarchonChain *chain);

// # Safety
// `chain` must be a live handle and `out` writable.
enum MarchonStatus marchon_chain_spectrum(const struct MarchonChain *chain,
                                          struct MarchonSpectrum *out);

// `max_ij |(P^t)_ij - 1/n|` for `t >= 1`.
//
// # Safety
// `chain` must be a live handle and `out` writable.
enum MarchonStatus marchon_chain_deviation(const struct MarchonChain *chain,
                                           uint64_t t,
                                           double *out);

// Step size at step `t` of a constant-free schedule. `q` is only read by
// [`MarchonSchedule::Mcgd`].
//
// # Safety
// `out` must be writable.
enum MarchonStatus marchon_step_size(enum MarchonSchedule schedule,
                                     double coefficient,
                                     double q,
                                     uint64_t t,
                                     double *out);

// Runs every `(method, seed)` cell of a JSON experiment config in memory
// and returns the per-method summary as a JSON string. Nothing is written
// to disk. Release the string with [`marchon_string_free`].
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` writable.
enum MarchonStatus marchon_compare_json(const char *config_json, char **out);

// Runs a single cell (first method, first seed) and reports divergence
// through [`MarchonStatus::Diverged`]. On success `out_subopt` receives
// `f(x_bar_T) - f*`.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out_subopt` writable.
enum MarchonStatus marchon_run_json(const char *config_json, double *out_subopt);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void marchon_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARCHON_H */
