/* C interface to the rdmini radiation-diffusion solver. */

#ifndef RDMINI_H
#define RDMINI_H

/* Generated by cbindgen; edit src/lib.rs instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum RdminiStatus {
  RDMINI_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RDMINI_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RDMINI_BAD_STRING = 2,
  /**
   * Config parse or validation failure; see rdmini_last_error().
   */
  RDMINI_CONFIG_ERROR = 3,
  /**
   * The run could not execute (worker cap, invalid topology, ...).
   */
  RDMINI_RUN_ERROR = 4,
  /**
   * Filesystem failure while writing an output.
   */
  RDMINI_IO_ERROR = 5,
  /**
   * A panic was caught at the FFI boundary.
   */
  RDMINI_INTERNAL_ERROR = 6,
} RdminiStatus;

/**
 * A validated problem: configuration, workload, and tile topology.
 */
typedef struct RdminiProblem RdminiProblem;

/**
 * A finished run: per-solve statistics and the gathered final field.
 */
typedef struct RdminiReport RdminiReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rdmini_last_error(void);

/**
 * Create a problem from a config file path (TOML sections as documented
 * for the CLI). On success `*out` owns the handle.
 */
enum RdminiStatus rdmini_problem_from_file(const char *path, struct RdminiProblem **out);

/**
 * Create a problem from config text. An empty string selects the defaults
 * (the full 200 x 100 x 2 workload).
 */
enum RdminiStatus rdmini_problem_from_toml(const char *text, struct RdminiProblem **out);

void rdmini_problem_free(struct RdminiProblem *p);

/**
 * Execute the workload. On success `*out` owns a report handle; inspect
 * rdmini_report_all_converged() for the solve outcome.
 */
enum RdminiStatus rdmini_run(const struct RdminiProblem *p, struct RdminiReport **out);

void rdmini_report_free(struct RdminiReport *r);

/**
 * Number of linear solves executed (nsteps * solves_per_step when all converged).
 */
uint64_t rdmini_report_solve_count(const struct RdminiReport *r);

/**
 * Number of solves that reached the tolerance.
 */
uint64_t rdmini_report_converged_count(const struct RdminiReport *r);

/**
 * True when every solve converged.
 */
bool rdmini_report_all_converged(const struct RdminiReport *r);

/**
 * Total BiCGSTAB iterations across all solves.
 */
uint64_t rdmini_report_total_iterations(const struct RdminiReport *r);

/**
 * Total global reduction events across all solves.
 */
uint64_t rdmini_report_total_reduction_events(const struct RdminiReport *r);

/**
 * Total operator applications across all solves.
 */
uint64_t rdmini_report_total_matvecs(const struct RdminiReport *r);

/**
 * Wall-clock seconds of the run (monotonic clock).
 */
double rdmini_report_wall_seconds(const struct RdminiReport *r);

/**
 * Zone sum of the initial field.
 */
double rdmini_report_initial_energy(const struct RdminiReport *r);

/**
 * Zone sum of the final field.
 */
double rdmini_report_final_energy(const struct RdminiReport *r);

/**
 * FNV-1a checksum of the final field bytes; equal checksums mean
 * bit-identical results.
 */
uint64_t rdmini_report_field_checksum(const struct RdminiReport *r);

/**
 * Write the structured text report (same format as the CLI).
 */
enum RdminiStatus rdmini_report_write_text(const struct RdminiReport *r, const char *path);

/**
 * Write the final field in the flat binary snapshot layout
 * (u64-le header {nx1, nx2, nspecies}, then row-major f64-le values).
 */
enum RdminiStatus rdmini_report_write_field(const struct RdminiReport *r, const char *path);

/**
 * Run the kernel benchmark described by `config_toml` (empty string for
 * defaults) and write the CSV to `path`.
 */
enum RdminiStatus rdmini_kernel_bench_to_csv(const char *config_toml, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RDMINI_H */
