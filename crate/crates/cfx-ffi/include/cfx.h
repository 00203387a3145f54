/* C interface to the counterfactual evaluation toolkit. */

#ifndef CFX_H
#define CFX_H

/* Generated by cbindgen from cfx-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every FFI call.
typedef enum CfxStatus {
  // The out-parameters hold the result.
  CFX_OK = 0,
  // A required pointer argument was NULL.
  CFX_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  CFX_INVALID_UTF8 = 2,
  // An argument was out of range (score outside 1..=4, zero length).
  CFX_INVALID_ARGUMENT = 3,
  // The quantity is undefined for this input (empty set, constant
  // ranks, zero-token factual).
  CFX_UNDEFINED = 4,
} CfxStatus;

// Opaque accumulator of judge scores in 1..=4.
typedef struct CfxScoreDist CfxScoreDist;

// Summary of an accumulated score distribution: per-score percentages,
// the disagreement and agreement bins, the mean and the count.
typedef struct CfxScoreDistSummary {
  double pct_1;
  double pct_2;
  double pct_3;
  double pct_4;
  double pct_12;
  double pct_34;
  double avg;
  uintptr_t n;
} CfxScoreDistSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Token-level Levenshtein distance between two whitespace-tokenized
// strings.
//
// # Safety
// `a` and `b` must be NUL-terminated strings; `out` must be writable.
enum CfxStatus cfx_token_levenshtein(const char *a, const char *b, uintptr_t *out);

// Normalized token distance `d(factual, counterfactual) / |factual|`.
// Undefined when the factual tokenizes to nothing.
//
// # Safety
// `factual` and `counterfactual` must be NUL-terminated strings; `out`
// must be writable.
enum CfxStatus cfx_pair_textual_similarity(const char *factual,
                                           const char *counterfactual,
                                           double *out);

// Perplexity from conditional token log-probabilities:
// `exp(-mean(logprobs))`. Log-probabilities must be finite and <= 0.
//
// # Safety
// `logprobs` must point to `len` readable doubles; `out` must be
// writable.
enum CfxStatus cfx_perplexity(const double *logprobs, uintptr_t len, double *out);

// Spearman rank correlation with fractional tied ranks. Undefined when
// either input is constant.
//
// # Safety
// `xs` and `ys` must each point to `len` readable doubles; `out` must be
// writable.
enum CfxStatus cfx_spearman(const double *xs, const double *ys, uintptr_t len, double *out);

// Whether a counterfactual reproduces the untouched counterpart field
// verbatim after trimming, whitespace collapsing and case folding.
//
// # Safety
// `untouched` and `counterfactual` must be NUL-terminated strings; `out`
// must be writable.
enum CfxStatus cfx_is_copy_paste(const char *untouched, const char *counterfactual, bool *out);

// Mean of the three judge aspect scores. Each must lie in [1, 4].
//
// # Safety
// `out` must be writable.
enum CfxStatus cfx_average_scores(double fl, double ua, double rs, double *out);

// Create an empty score accumulator. Free with [`cfx_score_dist_free`].
struct CfxScoreDist *cfx_score_dist_new(void);

// Add one score in 1..=4.
//
// # Safety
// `dist` must be a live handle from [`cfx_score_dist_new`].
enum CfxStatus cfx_score_dist_push(struct CfxScoreDist *dist, int score);

// Summarize the accumulated scores. Undefined while empty.
//
// # Safety
// `dist` must be a live handle; `out` must be writable.
enum CfxStatus cfx_score_dist_summary(const struct CfxScoreDist *dist,
                                      struct CfxScoreDistSummary *out);

// Release a handle from [`cfx_score_dist_new`]. NULL is a no-op.
//
// # Safety
// `dist` must be NULL or a live handle, and must not be used afterwards.
void cfx_score_dist_free(struct CfxScoreDist *dist);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CFX_H */
