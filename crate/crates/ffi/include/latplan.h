#ifndef LATPLAN_H
#define LATPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define LP_DIFFICULTY_EASY 0

#define LP_DIFFICULTY_MEDIUM 1

#define LP_DIFFICULTY_HARD 2

// Result code of every fallible call.
typedef enum LpStatus {
  LP_STATUS_OK = 0,
  LP_STATUS_NULL_POINTER = 1,
  LP_STATUS_INVALID_ARGUMENT = 2,
  LP_STATUS_IO = 3,
  LP_STATUS_PARSE = 4,
  LP_STATUS_CONFIG = 5,
  LP_STATUS_SHAPE = 6,
  LP_STATUS_DOMAIN = 7,
  LP_STATUS_NUMERIC = 8,
  LP_STATUS_CHECKPOINT = 9,
  LP_STATUS_ARCHITECTURE = 10,
  LP_STATUS_GENERATION = 11,
  LP_STATUS_BUFFER_TOO_SMALL = 12,
  LP_STATUS_PANIC = 13,
} LpStatus;

// A scenario corpus.
typedef struct LpCorpus LpCorpus;

// A planner with its parameters.
typedef struct LpModel LpModel;

// Held-out metrics of a model on a corpus.
typedef struct LpEvalSummary {
  double ade_1s;
  double ade_2s;
  double ade_3s;
  double ade_avg;
  // Percent, mean over the 1/2/3 s horizons.
  double collision_rate;
} LpEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *lp_version(void);

// Copies the calling thread's last error message into `buf` (always
// NUL-terminated when `len > 0`). Returns the full message length in
// bytes, excluding the terminator; 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t lp_last_error_message(char *buf, size_t len);

// Generates `count` scenarios with seeds `base_seed, base_seed + 1, …`.
//
// # Safety
// `out` must be a valid pointer; on success it receives a new handle.
enum LpStatus lp_corpus_generate(size_t count,
                                 uint32_t difficulty,
                                 uint64_t base_seed,
                                 struct LpCorpus **out);

// Reads a JSON-lines corpus.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LpStatus lp_corpus_load(const char *path, struct LpCorpus **out);

// Writes a corpus as JSON lines.
//
// # Safety
// `corpus` must be a live handle and `path` a NUL-terminated string.
enum LpStatus lp_corpus_save(const struct LpCorpus *corpus, const char *path);

// # Safety
// `corpus` must be a live handle and `out` a valid pointer.
enum LpStatus lp_corpus_len(const struct LpCorpus *corpus, size_t *out);

// Releases a corpus. Null is ignored.
//
// # Safety
// `corpus` must be null or a handle not yet freed.
void lp_corpus_free(struct LpCorpus *corpus);

// A freshly initialized model with the compact experiment architecture.
//
// # Safety
// `out` must be a valid pointer.
enum LpStatus lp_model_new_default(uint64_t seed, struct LpModel **out);

// Loads a model from a checkpoint written by the CLI or [`lp_model_save`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LpStatus lp_model_load(const char *path, struct LpModel **out);

// Saves parameters and architecture (no optimizer state).
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum LpStatus lp_model_save(const struct LpModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void lp_model_free(struct LpModel *model);

// Plans scenario `index` and writes the trajectory as interleaved world
// `x, y` pairs. `capacity` is the number of doubles `out_xy` can hold;
// `written` receives the number needed (2·T) even when it is too small.
//
// # Safety
// Handles must be live; `out_xy` must hold `capacity` doubles; `written`
// must be a valid pointer.
enum LpStatus lp_model_plan(const struct LpModel *model,
                            const struct LpCorpus *corpus,
                            size_t index,
                            double *out_xy,
                            size_t capacity,
                            size_t *written);

// ADE at 1/2/3 s and the collision rate of `model` over `corpus`.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum LpStatus lp_evaluate(const struct LpModel *model,
                          const struct LpCorpus *corpus,
                          struct LpEvalSummary *out);

// `nc·dac·(5·ep + 5·ttc + 2·comf)/12`; every subscore must lie in [0, 1].
//
// # Safety
// `out` must be a valid pointer.
enum LpStatus lp_pdms_compose(double nc,
                              double dac,
                              double ttc,
                              double comf,
                              double ep,
                              double *out);

// Two-axis Laplace negative log-likelihood `Σ log(2b) + |y−μ|/b`.
//
// # Safety
// `out` must be a valid pointer.
enum LpStatus lp_laplace_nll(double y_x,
                             double y_y,
                             double mu_x,
                             double mu_y,
                             double b_x,
                             double b_y,
                             double *out);

// Column-wise group normalization of a row-major `g×t` reward matrix.
//
// # Safety
// `raw` and `out` must each hold `g·t` doubles; they may alias.
enum LpStatus lp_normalize_rewards(const double *raw, size_t g, size_t t, double *out);

// Per-point suffix sums of a row-major `g×t` matrix of normalized rewards.
//
// # Safety
// `rtilde` and `out` must each hold `g·t` doubles; they may alias.
enum LpStatus lp_advantages(const double *rtilde, size_t g, size_t t, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATPLAN_H */
