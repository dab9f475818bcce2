/* C interface to the moelab overlap metrics and statistics. */

#ifndef MOELAB_H
#define MOELAB_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every FFI call.
 */
typedef enum MoelabStatus {
  MOELAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MOELAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or inconsistent.
   */
  MOELAB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The inputs are degenerate (e.g. a zero-norm weight vector).
   */
  MOELAB_STATUS_DEGENERATE = 3,
  /**
   * The quantity is undefined for these inputs (e.g. fewer than two
   * experts, or an empty evaluation stream).
   */
  MOELAB_STATUS_UNDEFINED = 4,
  /**
   * Too few samples for the requested statistic.
   */
  MOELAB_STATUS_SAMPLE_TOO_SMALL = 5,
  /**
   * A constant series has no defined correlation.
   */
  MOELAB_STATUS_CONSTANT_SERIES = 6,
} MoelabStatus;

/**
 * Opaque streaming accumulator for activation overlap.
 */
typedef struct MoelabActMso MoelabActMso;

/**
 * Pearson correlation with significance.
 */
typedef struct MoelabCorrelation {
  double r;
  double p_two_sided;
  size_t n;
  /**
   * Nonzero when the Fisher interval below is defined (n >= 4).
   */
  uint8_t has_ci;
  double ci95_low;
  double ci95_high;
} MoelabCorrelation;

/**
 * Two-sided paired t-test result.
 */
typedef struct MoelabPairedT {
  double mean_diff;
  double t_statistic;
  double p_two_sided;
  size_t degrees_freedom;
  /**
   * Nonzero when the differences had zero variance with nonzero mean
   * (t reported as +/- infinity, p as 0).
   */
  uint8_t saturated;
} MoelabPairedT;

/**
 * Report of the trace-orthogonality demonstration.
 */
typedef struct MoelabGapReport {
  double flat_inner_product;
  double mean_sq_cos;
  double max_abs_cos;
  double control_mean_sq_cos;
  double control_max_abs_cos;
} MoelabGapReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a NUL-terminated static string.
 */
const char *moelab_version(void);

/**
 * Static description of a status code.
 */
const char *moelab_status_message(enum MoelabStatus status);

/**
 * Mean squared overlap of one layer's expert weights.
 *
 * `experts` is row-major `[n_experts][weight_len]` (each row one
 * flattened up-projection).
 *
 * # Safety
 * `experts` must point to `n_experts * weight_len` doubles; `out` must be
 * a valid writable pointer.
 */
enum MoelabStatus moelab_weight_mso(const double *experts,
                                    size_t n_experts,
                                    size_t weight_len,
                                    double *out);

/**
 * Unnormalized orthogonality penalty (pair sum of squared cosines) of one
 * layer's expert weights.
 *
 * # Safety
 * Same contract as [`moelab_weight_mso`].
 */
enum MoelabStatus moelab_orthogonality_loss(const double *experts,
                                            size_t n_experts,
                                            size_t weight_len,
                                            double *out);

/**
 * Pearson r between two equal-length series, two-sided p, and the Fisher
 * 95% interval when n >= 4.
 *
 * # Safety
 * `xs` and `ys` must each point to `n` doubles; `out` must be writable.
 */
enum MoelabStatus moelab_pearson(const double *xs,
                                 const double *ys,
                                 size_t n,
                                 struct MoelabCorrelation *out);

/**
 * Paired t-test on same-index pairs of `a` and `b`.
 *
 * # Safety
 * `a` and `b` must each point to `n` doubles; `out` must be writable.
 */
enum MoelabStatus moelab_paired_t_test(const double *a,
                                       const double *b,
                                       size_t n,
                                       struct MoelabPairedT *out);

/**
 * CDF of Student's t with `df` degrees of freedom.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum MoelabStatus moelab_student_t_cdf(double t, size_t df, double *out);

/**
 * Builds a weight pair with zero flattened inner product but nonzero
 * matrix product and measures the activation cosine empirically, next to
 * a disjoint-support control pair.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum MoelabStatus moelab_gap_demo(size_t d_model,
                                  size_t d_ffn,
                                  size_t trials,
                                  uint64_t seed,
                                  struct MoelabGapReport *out);

/**
 * Create an accumulator over `n_layers` layers with `top_k` selected
 * experts per token. Returns null when the configuration is invalid
 * (`top_k < 2` or `n_layers == 0`).
 */
struct MoelabActMso *moelab_act_mso_new(size_t n_layers, size_t top_k);

/**
 * Push one token's selected-expert outputs: `outputs` is row-major
 * `[top_k][dim]`.
 *
 * # Safety
 * `acc` must come from [`moelab_act_mso_new`] and not yet be finished or
 * freed; `outputs` must point to `top_k * dim` doubles.
 */
enum MoelabStatus moelab_act_mso_push(struct MoelabActMso *acc,
                                      size_t layer,
                                      const double *outputs,
                                      size_t dim);

/**
 * Finish the accumulator, writing per-layer activation MSO into
 * `per_layer_out` (length `n_layers` as given at creation) and the skip
 * diagnostics into the remaining out-pointers. The handle is consumed on
 * success and on any status except `NullArgument`.
 *
 * # Safety
 * `acc` must come from [`moelab_act_mso_new`]; `per_layer_out` must hold
 * `n_layers` doubles; the other out-pointers must be writable.
 */
enum MoelabStatus moelab_act_mso_finish(struct MoelabActMso *acc,
                                        double *per_layer_out,
                                        uint64_t *skipped_pairs_out,
                                        uint64_t *total_pairs_out,
                                        uint8_t *flagged_out);

/**
 * Release an accumulator without finishing it. Null is ignored.
 *
 * # Safety
 * `acc` must come from [`moelab_act_mso_new`] and not already be finished
 * or freed.
 */
void moelab_act_mso_free(struct MoelabActMso *acc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOELAB_H */
