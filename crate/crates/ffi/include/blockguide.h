#ifndef BLOCKGUIDE_H
#define BLOCKGUIDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  BG_STATUS_OK = 0,
  BG_STATUS_NULL_POINTER = 1,
  BG_STATUS_INVALID_ARGUMENT = 2,
  BG_STATUS_UNAVAILABLE_GRADIENT = 3,
  BG_STATUS_UNSUPPORTED = 4,
  BG_STATUS_CONFIG = 5,
  BG_STATUS_IO = 6,
  BG_STATUS_BUFFER_TOO_SMALL = 7,
  BG_STATUS_PANIC = 8,
} BgStatus;

typedef enum {
  BG_SAMPLER_UNGUIDED = 0,
  BG_SAMPLER_BON = 1,
  BG_SAMPLER_CODE = 2,
  BG_SAMPLER_GRAD_ONLY = 3,
  BG_SAMPLER_UNICODE = 4,
} BgSampler;

typedef enum {
  BG_SELECTION_GREEDY = 0,
  BG_SELECTION_MULTINOMIAL = 1,
} BgSelection;

typedef struct BgPrior BgPrior;

typedef struct BgReward BgReward;

typedef struct BgSchedule BgSchedule;

/**
 * Sampler settings. `cluster_k = 0` disables clustering; `zoo_probes = 0`
 * selects analytic gradients, anything else zero-order estimation.
 */
typedef struct {
  BgSampler sampler;
  size_t n_particles;
  size_t block_sample;
  size_t block_grad;
  double temperature;
  double guidance_scale;
  BgSelection selection;
  size_t cluster_k;
  size_t grad_repeats;
  size_t zoo_probes;
  double zoo_sigma;
} BgSamplerConfig;

typedef struct {
  uint64_t denoiser_calls;
  uint64_t reward_evals;
  uint64_t gradient_evals;
} BgNfe;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *bg_last_error(void);

const char *bg_version(void);

/**
 * Linear β schedule from `beta_start` to `beta_end` over `steps` steps.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
BgStatus bg_schedule_linear(size_t steps, double beta_start, double beta_end, BgSchedule **out);

/**
 * The standard 1e-4..0.02 range stretched to `steps` steps.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
BgStatus bg_schedule_default(size_t steps, BgSchedule **out);

/**
 * # Safety
 * `schedule` must be a live handle; `out` must be writable.
 */
BgStatus bg_schedule_alpha_bar(const BgSchedule *schedule, size_t t, double *out);

/**
 * # Safety
 * `schedule` must be null or a handle not yet freed.
 */
void bg_schedule_free(BgSchedule *schedule);

/**
 * Isotropic Gaussian mixture in `dim` dimensions. `means` holds
 * `n_components * dim` values, one row per component.
 *
 * # Safety
 * The arrays must hold the stated number of elements; `out` must be writable.
 */
BgStatus bg_prior_new(size_t dim,
                      size_t n_components,
                      const double *weights,
                      const double *means,
                      const double *variances,
                      BgPrior **out);

/**
 * # Safety
 * `prior` must be null or a handle not yet freed.
 */
void bg_prior_free(BgPrior *prior);

/**
 * Score of the noised marginal at step `t >= 1`.
 *
 * # Safety
 * `x` and `out` must each hold `dim` values; handles must be live.
 */
BgStatus bg_prior_score(const BgPrior *prior,
                        const BgSchedule *schedule,
                        const double *x,
                        size_t dim,
                        size_t t,
                        double *out);

/**
 * Posterior mean of the clean sample given `x` at step `t`.
 *
 * # Safety
 * `x` and `out` must each hold `dim` values; handles must be live.
 */
BgStatus bg_tweedie_denoise(const BgPrior *prior,
                            const BgSchedule *schedule,
                            const double *x,
                            size_t dim,
                            size_t t,
                            double *out);

/**
 * `r(x) = a·x`.
 *
 * # Safety
 * `a` must hold `dim` values; `out` must be writable.
 */
BgStatus bg_reward_linear(const double *a, size_t dim, BgReward **out);

/**
 * `r(x) = -scale ‖x - target‖²`.
 *
 * # Safety
 * `target` must hold `dim` values; `out` must be writable.
 */
BgStatus bg_reward_target(const double *target, size_t dim, double scale, BgReward **out);

/**
 * `base` rounded down to multiples of `step`; has no analytic gradient.
 * `base` stays owned by the caller.
 *
 * # Safety
 * `base` must be a live handle; `out` must be writable.
 */
BgStatus bg_reward_quantized(const BgReward *base, double step, BgReward **out);

/**
 * # Safety
 * `reward` must be a live handle, `x` must hold `dim` values, `out` writable.
 */
BgStatus bg_reward_evaluate(const BgReward *reward, const double *x, size_t dim, double *out);

/**
 * # Safety
 * `reward` must be null or a handle not yet freed.
 */
void bg_reward_free(BgReward *reward);

/**
 * Defaults matching the library's: UniCoDe, N = 4, blocks of 5, τ = 0.1, γ = 0.2.
 */
BgSamplerConfig bg_sampler_config_default(void);

/**
 * Runs one sampler from `t = T` to `0`.
 *
 * Samples are written row-major into `samples` (room for `capacity` rows of
 * the prior's dimension); `*n_samples` receives the number produced. If the
 * buffer is too small, nothing is written except `*n_samples` and the call
 * returns `BUFFER_TOO_SMALL`. `nfe` may be null.
 *
 * # Safety
 * Handles must be live; `samples` must hold `capacity * dim` values;
 * `config` and `n_samples` must be valid pointers.
 */
BgStatus bg_run_sampler(const BgSamplerConfig *config,
                        const BgPrior *prior,
                        const BgReward *reward,
                        const BgSchedule *schedule,
                        uint64_t seed,
                        double *samples,
                        size_t capacity,
                        size_t *n_samples,
                        BgNfe *nfe);

/**
 * `softmax(rewards / tau)` into `out` (both of length `n`).
 *
 * # Safety
 * `rewards` and `out` must each hold `n` values.
 */
BgStatus bg_softmax_weights(const double *rewards, size_t n, double tau, double *out);

/**
 * Biased squared MMD with an RBF kernel between two sample sets.
 *
 * # Safety
 * `xs` must hold `nx * dim` values, `ys` `ny * dim`; `out` must be writable.
 */
BgStatus bg_mmd2_rbf(const double *xs,
                     size_t nx,
                     const double *ys,
                     size_t ny,
                     size_t dim,
                     double bandwidth,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOCKGUIDE_H */
